//! JSON-over-HTTP client for a remote model provider.
//!
//! ```text
//! POST /v1/embed_text   {"texts": [..]}                      -> {"embeddings": [[..]]}
//! POST /v1/embed_image  {"image_b64": ".."}                   -> {"embedding": [..]}
//! POST /v1/generate     {"prompt", "num_candidates", "beam_size", "max_new_tokens", "stop"}
//!                                                             -> {"candidates": [{"text", "score"}]}
//! GET  /v1/manifest                                           -> {"provider_id", "embedding_dimension", "eos_token"}
//! ```
//!
//! Transport failures, HTTP 429 and 5xx are retried with exponential backoff.

use std::thread::sleep;
use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{GenerationCandidate, GenerationParams, Provider, ProviderError, ProviderManifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl HttpProviderConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpProviderConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedTextResponse {
    embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct EmbedImageRequest {
    image_b64: String,
}

#[derive(Deserialize)]
struct EmbedImageResponse {
    embedding: Vec<f32>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    num_candidates: usize,
    beam_size: usize,
    max_new_tokens: usize,
    stop: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Vec<GenerationCandidate>,
    /// Optional copy of the received prompt; checked when present.
    #[serde(default)]
    echo: Option<String>,
}

enum Attempt {
    Retry(ProviderError),
    Fail(ProviderError),
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpProvider { config, client })
    }

    pub fn config(&self) -> &HttpProviderConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn once<T: DeserializeOwned>(&self, req: reqwest::blocking::RequestBuilder) -> Result<T, Attempt> {
        let resp = req.send().map_err(|e| {
            Attempt::Retry(ProviderError::Transport {
                attempts: 1,
                message: e.to_string(),
            })
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let err = ProviderError::Status {
                status: status.as_u16(),
                body,
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            });
        }
        let bytes = resp.bytes().map_err(|e| {
            Attempt::Retry(ProviderError::Transport {
                attempts: 1,
                message: e.to_string(),
            })
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Attempt::Fail(ProviderError::Protocol(e.to_string())))
    }

    fn call<T: DeserializeOwned>(
        &self,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
    ) -> Result<T, ProviderError> {
        let attempts = self.config.attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.once(build()) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("provider request failed (attempt {attempt}/{attempts}): {e}");
                    last = Some(e);
                    if attempt < attempts {
                        sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(match last {
            Some(ProviderError::Transport { message, .. }) => ProviderError::Transport { attempts, message },
            Some(other) => other,
            None => unreachable!("at least one attempt is made"),
        })
    }
}

impl Provider for HttpProvider {
    fn manifest(&self) -> Result<ProviderManifest, ProviderError> {
        self.call(|| self.client.get(self.url("/v1/manifest")))
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = EmbedTextRequest { texts };
        let resp: EmbedTextResponse = self.call(|| self.client.post(self.url("/v1/embed_text")).json(&body))?;
        Ok(resp.embeddings)
    }

    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>, ProviderError> {
        let body = EmbedImageRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(image),
        };
        let resp: EmbedImageResponse = self.call(|| self.client.post(self.url("/v1/embed_image")).json(&body))?;
        Ok(resp.embedding)
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<GenerationCandidate>, ProviderError> {
        let body = GenerateRequest {
            prompt,
            num_candidates: params.num_candidates,
            beam_size: params.beam_size,
            max_new_tokens: params.max_new_tokens,
            stop: &params.stop_token,
        };
        let resp: GenerateResponse = self.call(|| self.client.post(self.url("/v1/generate")).json(&body))?;
        if let Some(echo) = resp.echo {
            if echo != prompt {
                return Err(ProviderError::Protocol("prompt was altered in transit".into()));
            }
        }
        Ok(resp.candidates)
    }
}
