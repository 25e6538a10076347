//! Per-image captioning flow: embed the image, retrieve the top-K captions,
//! render the N-shot prompt, generate `c` candidates and keep the one whose
//! text embedding is closest to the image embedding.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::{RetrievalHit, SearchError};
use crate::prompt::{
    build_retrieval_prompt, build_socratic_prompt, language_display_name, PromptError, PromptShot, PromptSpec,
    SocraticContext,
};
use crate::provider::{Gateway, GenerationParams, ImageSource, ProviderError};
use crate::store::{Embedding, EmbeddingStore, StoreError};

/// Three Spanish demonstrations, one per training image.
pub const DEFAULT_SHOTS_JSON: &str = include_str!("../fixtures/shots/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Retrieval,
    Socratic,
}

impl std::str::FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieval" => Ok(Template::Retrieval),
            "socratic" => Ok(Template::Socratic),
            other => Err(format!("unknown template `{other}` (expected retrieval or socratic)")),
        }
    }
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Template::Retrieval => "retrieval",
            Template::Socratic => "socratic",
        })
    }
}

/// Category vocabularies scored against the image for the socratic template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocraticVocabulary {
    pub image_types: Vec<String>,
    pub people_counts: Vec<String>,
    pub places: Vec<String>,
    pub objects: Vec<String>,
    pub top_places: usize,
    pub top_objects: usize,
}

impl Default for SocraticVocabulary {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SocraticVocabulary {
            image_types: v(&["photo", "cartoon", "sketch", "painting"]),
            people_counts: v(&[
                "are no people",
                "is one person",
                "are two people",
                "are three people",
                "are several people",
                "are many people",
            ]),
            places: v(&[
                "kitchen", "bathroom", "bedroom", "living room", "street", "beach", "park", "field", "forest",
                "mountain", "city", "restaurant", "office", "market", "farm", "airport", "train station",
                "stadium", "river", "garden",
            ]),
            objects: v(&[
                "person", "dog", "cat", "horse", "bird", "car", "bus", "bicycle", "motorcycle", "train", "boat",
                "airplane", "table", "chair", "bed", "couch", "toilet", "sink", "tree", "flower", "food",
                "pizza", "cake", "cup", "bottle", "phone", "laptop", "book", "clock", "umbrella",
            ]),
            top_places: 3,
            top_objects: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Retrieved captions in the query block.
    pub k: usize,
    /// Demonstrations taken from the front of `shots`.
    pub n: usize,
    /// Generated candidates to rerank.
    pub c: usize,
    pub beam_size: usize,
    pub max_new_tokens: usize,
    /// Target language code, e.g. "es".
    pub language: String,
    pub template: Template,
    pub shots: Vec<PromptShot>,
    pub socratic_vocabulary: SocraticVocabulary,
    /// Images captioned concurrently by [`caption_batch`].
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 4,
            n: 3,
            c: 3,
            beam_size: 3,
            max_new_tokens: 40,
            language: "en".into(),
            template: Template::Retrieval,
            shots: default_shots(),
            socratic_vocabulary: SocraticVocabulary::default(),
            parallelism: default_parallelism(),
        }
    }
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

pub fn default_shots() -> Vec<PromptShot> {
    serde_json::from_str(DEFAULT_SHOTS_JSON).expect("bundled shots file is valid")
}

pub fn load_shots(path: &Path) -> Result<Vec<PromptShot>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.c == 0 {
            return bad("c must be at least 1".into());
        }
        if self.shots.len() < self.n {
            return bad(format!("n = {} but only {} shots are available", self.n, self.shots.len()));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        language_display_name(&self.language).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.generation_params("x")
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    fn generation_params(&self, stop: &str) -> GenerationParams {
        GenerationParams {
            num_candidates: self.c,
            beam_size: self.beam_size,
            max_new_tokens: self.max_new_tokens,
            stop_token: stop.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieve,
    Prompt,
    Generate,
    Rerank,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Retrieve => "retrieve",
            Stage::Prompt => "prompt",
            Stage::Generate => "generate",
            Stage::Rerank => "rerank",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("[{stage}] image `{image_id}`: {source}")]
    Stage {
        stage: Stage,
        image_id: String,
        #[source]
        source: StageFailure,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Stage {
                source: StageFailure::Provider(e),
                ..
            } if e.is_transport()
        )
    }
}

/// An image to caption, with the identifier used in outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub id: String,
    pub data: ImageData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageData {
    Path(PathBuf),
    Bytes(Vec<u8>),
}

impl ImageInput {
    /// Identified by its file stem.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        ImageInput {
            id,
            data: ImageData::Path(path),
        }
    }

    pub fn from_bytes(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        ImageInput {
            id: id.into(),
            data: ImageData::Bytes(bytes),
        }
    }

    fn source(&self) -> ImageSource<'_> {
        match &self.data {
            ImageData::Path(p) => ImageSource::Path(p),
            ImageData::Bytes(b) => ImageSource::Bytes(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCaption {
    pub rank: usize,
    pub entry_id: u64,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: String,
    pub generation_score: f64,
    pub rerank_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResult {
    pub image_id: String,
    pub language: String,
    pub chosen: String,
    pub chosen_index: usize,
    pub candidates: Vec<ScoredCandidate>,
    pub retrieved: Vec<RetrievedCaption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub socratic: Option<SocraticContext>,
    pub prompt: String,
}

/// Inner product of the image with each candidate's text embedding, and the
/// first index holding the maximum.
pub fn rerank(image: &Embedding, candidates: &[String], gateway: &Gateway) -> Result<(Vec<f64>, usize), ProviderError> {
    if candidates.is_empty() {
        return Err(ProviderError::InvalidRequest("no candidates to rerank".into()));
    }
    let embs = gateway.embed_texts(candidates)?;
    let scores: Vec<f64> = embs.iter().map(|e| image.dot(e)).collect();
    Ok((scores.clone(), argmax_first(&scores)))
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

struct SocraticIndex {
    image_types: Vec<(String, Embedding)>,
    people_counts: Vec<(String, Embedding)>,
    places: Vec<(String, Embedding)>,
    objects: Vec<(String, Embedding)>,
}

impl SocraticIndex {
    fn build(vocab: &SocraticVocabulary, gateway: &Gateway) -> Result<Self, ProviderError> {
        let embed = |labels: &[String], phrase: &dyn Fn(&str) -> String| -> Result<Vec<(String, Embedding)>, ProviderError> {
            if labels.is_empty() {
                return Ok(Vec::new());
            }
            let texts: Vec<String> = labels.iter().map(|l| phrase(l)).collect();
            Ok(labels.iter().cloned().zip(gateway.embed_texts(&texts)?).collect())
        };
        Ok(SocraticIndex {
            image_types: embed(&vocab.image_types, &|l| format!("This is a {l}."))?,
            people_counts: embed(&vocab.people_counts, &|l| format!("There {l} in this photo."))?,
            places: embed(&vocab.places, &|l| format!("Photo of a {l}."))?,
            objects: embed(&vocab.objects, &|l| format!("Photo of a {l}."))?,
        })
    }

    fn ranked(items: &[(String, Embedding)], image: &Embedding, take: usize) -> Vec<String> {
        let mut scored: Vec<(f64, usize)> = items.iter().enumerate().map(|(i, (_, e))| (image.dot(e), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(take).map(|(_, i)| items[i].0.clone()).collect()
    }

    fn describe(&self, image: &Embedding, vocab: &SocraticVocabulary) -> SocraticContext {
        SocraticContext {
            image_type: Self::ranked(&self.image_types, image, 1).pop().unwrap_or_default(),
            people_count: Self::ranked(&self.people_counts, image, 1).pop().unwrap_or_default(),
            places: Self::ranked(&self.places, image, vocab.top_places),
            objects: Self::ranked(&self.objects, image, vocab.top_objects),
        }
    }
}

/// A validated configuration bound to a store and a gateway.
pub struct CaptionEngine<'a> {
    config: &'a PipelineConfig,
    store: &'a EmbeddingStore,
    gateway: &'a Gateway,
    language_name: &'static str,
    socratic: Option<SocraticIndex>,
}

impl<'a> CaptionEngine<'a> {
    pub fn new(config: &'a PipelineConfig, store: &'a EmbeddingStore, gateway: &'a Gateway) -> Result<Self, PipelineError> {
        config.validate()?;
        let language_name = language_display_name(&config.language).map_err(|e| PipelineError::Config(e.to_string()))?;
        let setup = |source: StageFailure| PipelineError::Stage {
            stage: Stage::Retrieve,
            image_id: String::new(),
            source,
        };
        store.check_provider(&gateway.manifest().provider_id).map_err(|e| setup(e.into()))?;
        if store.dimension() != gateway.manifest().embedding_dimension {
            return Err(setup(
                StoreError::Dimension {
                    expected: store.dimension(),
                    actual: gateway.manifest().embedding_dimension,
                }
                .into(),
            ));
        }
        let socratic = match config.template {
            Template::Socratic => {
                if let Some(i) = config.shots[..config.n].iter().position(|s| s.socratic.is_none()) {
                    return Err(PipelineError::Config(PromptError::ShotWithoutContext(i).to_string()));
                }
                Some(SocraticIndex::build(&config.socratic_vocabulary, gateway).map_err(|e| setup(e.into()))?)
            }
            Template::Retrieval => None,
        };
        Ok(CaptionEngine {
            config,
            store,
            gateway,
            language_name,
            socratic,
        })
    }

    pub fn caption(&self, image: &ImageInput) -> Result<CaptionResult, PipelineError> {
        let fail = |stage: Stage| {
            let image_id = image.id.clone();
            move |e: StageFailure| PipelineError::Stage {
                stage,
                image_id: image_id.clone(),
                source: e,
            }
        };
        let cfg = self.config;
        let eos = &self.gateway.manifest().eos_token;

        let image_emb = self
            .gateway
            .embed_image(image.source())
            .map_err(|e| fail(Stage::Retrieve)(e.into()))?;
        let hits: Vec<RetrievalHit> = self
            .store
            .top_k(&image_emb, cfg.k)
            .map_err(|e| fail(Stage::Retrieve)(e.into()))?;
        let retrieved: Vec<RetrievedCaption> = hits
            .iter()
            .map(|h| RetrievedCaption {
                rank: h.rank,
                entry_id: h.entry_id,
                score: h.score,
                text: self.store.entry(h.entry_id).expect("hit ids come from the store").text.clone(),
            })
            .collect();

        let shots = &cfg.shots[..cfg.n];
        let (prompt, socratic) = match &self.socratic {
            None => {
                let spec = PromptSpec::new(
                    shots.to_vec(),
                    retrieved.iter().map(|r| r.text.clone()).collect(),
                    self.language_name,
                    eos.clone(),
                );
                (build_retrieval_prompt(&spec).map_err(|e| fail(Stage::Prompt)(e.into()))?, None)
            }
            Some(index) => {
                let ctx = index.describe(&image_emb, &cfg.socratic_vocabulary);
                let p = build_socratic_prompt(&ctx, self.language_name, shots, eos)
                    .map_err(|e| fail(Stage::Prompt)(e.into()))?;
                (p, Some(ctx))
            }
        };

        let mut generated = self
            .gateway
            .generate(&prompt, &cfg.generation_params(eos))
            .map_err(|e| fail(Stage::Generate)(e.into()))?;
        for cand in generated.iter_mut().filter(|c| c.text.is_empty()) {
            let fallback = retrieved
                .first()
                .map(|r| r.text.clone())
                .or_else(|| socratic.as_ref().and_then(|s| s.objects.first().map(|o| format!("a {o}"))))
                .unwrap_or_else(|| "an image".to_string());
            log::warn!("image `{}`: empty candidate replaced by `{fallback}`", image.id);
            cand.text = fallback;
        }

        let texts: Vec<String> = generated.iter().map(|c| c.text.clone()).collect();
        let (scores, chosen_index) =
            rerank(&image_emb, &texts, self.gateway).map_err(|e| fail(Stage::Rerank)(e.into()))?;

        let candidates: Vec<ScoredCandidate> = generated
            .into_iter()
            .zip(scores)
            .map(|(g, s)| ScoredCandidate {
                text: g.text,
                generation_score: g.score,
                rerank_score: s,
            })
            .collect();
        Ok(CaptionResult {
            image_id: image.id.clone(),
            language: cfg.language.clone(),
            chosen: candidates[chosen_index].text.clone(),
            chosen_index,
            candidates,
            retrieved,
            socratic,
            prompt,
        })
    }

    /// Captions every image; per-image failures do not stop the batch.
    /// Output order matches input order.
    pub fn caption_batch(&self, images: &[ImageInput]) -> Vec<Result<CaptionResult, PipelineError>> {
        if self.config.parallelism <= 1 || images.len() <= 1 {
            return images.iter().map(|img| self.caption(img)).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.config.parallelism).build() {
            Ok(pool) => pool.install(|| images.par_iter().map(|img| self.caption(img)).collect()),
            Err(_) => images.iter().map(|img| self.caption(img)).collect(),
        }
    }
}

pub fn caption_image(
    image: &ImageInput,
    config: &PipelineConfig,
    store: &EmbeddingStore,
    gateway: &Gateway,
) -> Result<CaptionResult, PipelineError> {
    CaptionEngine::new(config, store, gateway)?.caption(image)
}

pub fn caption_batch(
    images: &[ImageInput],
    config: &PipelineConfig,
    store: &EmbeddingStore,
    gateway: &Gateway,
) -> Result<Vec<Result<CaptionResult, PipelineError>>, PipelineError> {
    Ok(CaptionEngine::new(config, store, gateway)?.caption_batch(images))
}
