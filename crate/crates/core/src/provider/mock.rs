//! Deterministic in-process provider for hermetic runs.
//!
//! Keying rules:
//! - text embedding: xxh3-64 of the UTF-8 text seeds a splitmix64 stream that
//!   yields `MOCK_DIMENSION` coordinates in [-1, 1), then the vector is
//!   normalized;
//! - image embedding: the image must decode; its vector is the text
//!   embedding of [`MockProvider::image_key`], `"image:" + hex(xxh3-64(bytes))`;
//! - generation: the retrieved captions and target language are parsed from
//!   the last prompt block; candidate `j` is the caption at
//!   `(xxh3-64(prompt) + j) mod K`, capitalized, with ` ({language})`
//!   appended for non-English targets and cut to `max_new_tokens` words.
//!   Scores are `-0.5 * (j + 1)`.

use std::sync::Mutex;

use xxhash_rust::xxh3::xxh3_64;

use super::{GenerationCandidate, GenerationParams, Provider, ProviderError, ProviderManifest};
use crate::prompt::BOT_INTRO;

pub const MOCK_PROVIDER_ID: &str = "mock-v1";
pub const MOCK_DIMENSION: usize = 64;
const MOCK_EOS: &str = "</s>";

#[derive(Debug, Default)]
pub struct MockProvider {
    prompts: Mutex<Vec<String>>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Text whose mock embedding equals the mock embedding of `image`.
    pub fn image_key(image: &[u8]) -> String {
        format!("image:{:016x}", xxh3_64(image))
    }

    /// Every prompt that reached `generate`, byte for byte, in call order.
    pub fn received_prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn text_vector(text: &str) -> Vec<f32> {
        let mut state = xxh3_64(text.as_bytes());
        let raw: Vec<f64> = (0..MOCK_DIMENSION)
            .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.iter().map(|x| (x / norm) as f32).collect()
    }

    /// Target language and retrieved captions of the open query block.
    pub fn parse_query_block(prompt: &str) -> (String, Vec<String>) {
        let block = match prompt.rfind(BOT_INTRO) {
            Some(i) => &prompt[i + BOT_INTRO.len()..],
            None => prompt,
        };
        const CLOSING: &str = "A creative short caption I can generate to describe this image in ";
        let (body, language) = match block.rfind(CLOSING) {
            Some(i) => {
                let lang = block[i + CLOSING.len()..].trim_end();
                let lang = lang.strip_suffix("is:").unwrap_or(lang).trim();
                (&block[..i], lang.to_string())
            }
            None => (block, String::new()),
        };
        let body = body.trim();
        let captions: Vec<String> = match body.strip_prefix("Similar images have the following captions:") {
            Some(list) => list
                .split(MOCK_EOS)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            None if !body.is_empty() => vec![body.to_string()],
            None => Vec::new(),
        };
        (language, captions)
    }

    fn edit(caption: &str, language: &str, max_words: usize) -> String {
        let trimmed = caption.trim().trim_end_matches('.');
        let mut chars = trimmed.chars();
        let mut text = match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect::<String>(),
            None => String::new(),
        };
        if !language.is_empty() && language != "english" {
            text.push_str(&format!(" ({language})"));
        }
        text.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
    }
}

impl Provider for MockProvider {
    fn manifest(&self) -> Result<ProviderManifest, ProviderError> {
        Ok(ProviderManifest {
            provider_id: MOCK_PROVIDER_ID.into(),
            embedding_dimension: MOCK_DIMENSION,
            eos_token: MOCK_EOS.into(),
        })
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| Self::text_vector(t)).collect())
    }

    fn embed_image(&self, image: &[u8]) -> Result<Vec<f32>, ProviderError> {
        image::load_from_memory(image).map_err(|e| ProviderError::UndecodableImage(e.to_string()))?;
        Ok(Self::text_vector(&Self::image_key(image)))
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<GenerationCandidate>, ProviderError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        let (language, captions) = Self::parse_query_block(prompt);
        let seed = xxh3_64(prompt.as_bytes()) as usize;
        Ok((0..params.num_candidates)
            .map(|j| {
                let text = if captions.is_empty() {
                    String::new()
                } else {
                    Self::edit(&captions[seed.wrapping_add(j) % captions.len()], &language, params.max_new_tokens)
                };
                GenerationCandidate {
                    text,
                    score: -0.5 * (j + 1) as f64,
                }
            })
            .collect())
    }
}
