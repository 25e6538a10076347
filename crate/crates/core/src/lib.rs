//! Retrieval-augmented multilingual image captioning.
//!
//! An image is embedded, the K most similar captions are retrieved from a
//! flat inner-product index, an N-shot prompt is rendered from them, a
//! language model generates `c` candidates and the candidate closest to the
//! image in embedding space is kept. The [`metrics`] module scores the
//! resulting captions with BLEU, ROUGE-L and CIDEr-D.
//!
//! Models live behind the [`provider::Provider`] trait: an HTTP client for a
//! remote model service and a deterministic mock for hermetic runs.

pub mod cli;
pub mod knn;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod store;

pub use knn::{top_k, top_k_batch, RetrievalHit, SearchError};
pub use pipeline::{caption_batch, caption_image, rerank, CaptionEngine, CaptionResult, ImageInput, PipelineConfig, Template};
pub use prompt::{build_retrieval_prompt, build_socratic_prompt, language_display_name, PromptShot, PromptSpec, SocraticContext};
pub use provider::{Gateway, GenerationCandidate, GenerationParams, MockProvider, Provider, ProviderManifest};
pub use store::{normalize, DatastoreEntry, Embedding, EmbeddingStore, StoreBuilder, StoreManifest};
