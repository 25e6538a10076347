//! Access to external model capabilities: text and image embedding and
//! prompted generation.
//!
//! Backends implement [`Provider`]. Callers go through a [`Gateway`], which
//! pins the provider manifest at connect time and enforces the contracts the
//! rest of the engine relies on (unit vectors of the declared dimension,
//! exactly `c` candidates sorted by score, stop-token truncation).

mod conformance;
mod http;
mod mock;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{normalize, Embedding};

pub use conformance::{run_conformance, ConformanceCheck, ConformanceReport};
pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{MockProvider, MOCK_DIMENSION, MOCK_PROVIDER_ID};

/// Texts per embedding request.
pub const EMBED_CHUNK: usize = 256;
/// Returned embeddings must be unit length within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("embedding dimension {actual} drifted from manifest dimension {expected}")]
    DimensionDrift { expected: usize, actual: usize },
    #[error("embedding {index} is not unit length (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("backend returned {got} candidates, {wanted} required")]
    TooFewCandidates { wanted: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("cannot read image {path}: {source}")]
    ImageIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ProviderError {
    /// Whether the failure came from the transport rather than from the
    /// request or the response contents.
    pub fn is_transport(&self) -> bool {
        matches!(self, ProviderError::Transport { .. } | ProviderError::Status { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderManifest {
    pub provider_id: String,
    pub embedding_dimension: usize,
    pub eos_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub num_candidates: usize,
    pub beam_size: usize,
    pub max_new_tokens: usize,
    pub stop_token: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            num_candidates: 3,
            beam_size: 3,
            max_new_tokens: 40,
            stop_token: crate::prompt::DEFAULT_SEPARATOR.to_string(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidRequest(m.to_string()));
        if self.num_candidates == 0 {
            return bad("num_candidates must be at least 1");
        }
        if self.beam_size == 0 {
            return bad("beam_size must be at least 1");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if self.num_candidates > self.beam_size {
            return Err(ProviderError::InvalidRequest(format!(
                "num_candidates ({}) exceeds beam_size ({}); candidates are taken from the final beams",
                self.num_candidates, self.beam_size
            )));
        }
        if self.stop_token.is_empty() {
            return bad("stop token must not be empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationCandidate {
    pub text: String,
    pub score: f64,
}

/// A model backend speaking the engine's four operations.
pub trait Provider: Send + Sync {
    fn manifest(&self) -> Result<ProviderManifest, ProviderError>;
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>, ProviderError>;
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<GenerationCandidate>, ProviderError>;
}

/// Image input: a file on disk or bytes already in memory.
#[derive(Debug, Clone, Copy)]
pub enum ImageSource<'a> {
    Path(&'a Path),
    Bytes(&'a [u8]),
}

impl ImageSource<'_> {
    pub fn read(&self) -> Result<std::borrow::Cow<'_, [u8]>, ProviderError> {
        match self {
            ImageSource::Path(p) => std::fs::read(p)
                .map(std::borrow::Cow::Owned)
                .map_err(|source| ProviderError::ImageIo {
                    path: p.display().to_string(),
                    source,
                }),
            ImageSource::Bytes(b) => Ok(std::borrow::Cow::Borrowed(b)),
        }
    }
}

/// Cuts `text` at the first occurrence of `stop` and trims whitespace.
pub fn truncate_at_stop(text: &str, stop: &str) -> String {
    let cut = match text.find(stop) {
        Some(i) => &text[..i],
        None => text,
    };
    cut.trim().to_string()
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    manifest: ProviderManifest,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("manifest", &self.manifest).finish()
    }
}

impl Gateway {
    /// Fetches and pins the provider manifest.
    pub fn connect(provider: Box<dyn Provider>) -> Result<Self, ProviderError> {
        let manifest = provider.manifest()?;
        if manifest.embedding_dimension == 0 {
            return Err(ProviderError::Protocol("manifest declares dimension 0".into()));
        }
        if manifest.eos_token.is_empty() {
            return Err(ProviderError::Protocol("manifest declares an empty eos token".into()));
        }
        Ok(Gateway { provider, manifest })
    }

    pub fn mock() -> Self {
        Gateway::connect(Box::new(MockProvider::new())).expect("mock manifest is valid")
    }

    pub fn manifest(&self) -> &ProviderManifest {
        &self.manifest
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider.as_ref()
    }

    fn to_embedding(&self, index: usize, raw: Vec<f32>) -> Result<Embedding, ProviderError> {
        if raw.len() != self.manifest.embedding_dimension {
            return Err(ProviderError::DimensionDrift {
                expected: self.manifest.embedding_dimension,
                actual: raw.len(),
            });
        }
        let norm = raw.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(ProviderError::NotUnit { index, norm });
        }
        normalize(&raw).map_err(|_| ProviderError::NotUnit { index, norm })
    }

    /// One unit embedding per text, in input order. Requests are chunked at
    /// [`EMBED_CHUNK`] texts.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(ProviderError::InvalidRequest(format!("text {i} is empty")));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_CHUNK) {
            let raw = self.provider.embed_texts(chunk)?;
            if raw.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "asked for {} embeddings, received {}",
                    chunk.len(),
                    raw.len()
                )));
            }
            for v in raw {
                let index = out.len();
                out.push(self.to_embedding(index, v)?);
            }
        }
        Ok(out)
    }

    pub fn embed_image(&self, image: ImageSource<'_>) -> Result<Embedding, ProviderError> {
        let bytes = image.read()?;
        image::guess_format(&bytes).map_err(|e| ProviderError::UndecodableImage(e.to_string()))?;
        let raw = self.provider.embed_image(&bytes)?;
        self.to_embedding(0, raw)
    }

    /// Exactly `params.num_candidates` candidates, best score first, each cut
    /// at the stop token.
    pub fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<GenerationCandidate>, ProviderError> {
        params.validate()?;
        if prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("prompt is empty".into()));
        }
        let raw = self.provider.generate(prompt, params)?;
        if raw.len() < params.num_candidates {
            return Err(ProviderError::TooFewCandidates {
                wanted: params.num_candidates,
                got: raw.len(),
            });
        }
        let mut cands: Vec<GenerationCandidate> = raw
            .into_iter()
            .map(|c| GenerationCandidate {
                text: truncate_at_stop(&c.text, &params.stop_token),
                score: c.score,
            })
            .collect();
        if cands.iter().any(|c| !c.score.is_finite()) {
            return Err(ProviderError::Protocol("non-finite candidate score".into()));
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score));
        cands.truncate(params.num_candidates);
        Ok(cands)
    }
}
