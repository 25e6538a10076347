//! N-shot prompt rendering.
//!
//! Both templates render `N` demonstration blocks followed by one open query
//! block. A demonstration block ends with its target caption, the separator
//! and a single space; the query block ends with `is:` and nothing after it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOT_INTRO: &str = "I am an intelligent image captioning bot.";
pub const DEFAULT_SEPARATOR: &str = "</s>";
const RETRIEVAL_LEAD: &str = "Similar images have the following captions: ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("the query block needs at least one retrieved caption")]
    NoRetrieved,
    #[error("shot {0} has no retrieved captions")]
    ShotWithoutCaptions(usize),
    #[error("shot {0} has an empty target caption")]
    ShotWithoutTarget(usize),
    #[error("shot {0} has no socratic context")]
    ShotWithoutContext(usize),
    #[error("language name must not be empty")]
    EmptyLanguage,
    #[error("separator must not be empty")]
    EmptySeparator,
    #[error("unsupported language code `{code}`; supported: {supported}")]
    UnknownLanguage { code: String, supported: String },
}

/// Visual categories describing one image, as used by the socratic template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocraticContext {
    pub image_type: String,
    /// Phrase completing "There ...", e.g. "are two people".
    pub people_count: String,
    pub places: Vec<String>,
    pub objects: Vec<String>,
}

/// One demonstration: captions of a (training) image and the caption the
/// model should produce for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptShot {
    pub retrieved_texts: Vec<String>,
    pub target_language: String,
    pub target_caption: String,
    /// Only read by the socratic template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub socratic: Option<SocraticContext>,
}

impl PromptShot {
    fn validate(&self, index: usize) -> Result<(), PromptError> {
        if self.retrieved_texts.is_empty() {
            return Err(PromptError::ShotWithoutCaptions(index));
        }
        if self.target_caption.trim().is_empty() {
            return Err(PromptError::ShotWithoutTarget(index));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub shots: Vec<PromptShot>,
    /// In retrieval rank order.
    pub query_retrieved: Vec<String>,
    pub language_name: String,
    pub separator: String,
}

impl PromptSpec {
    pub fn new(
        shots: Vec<PromptShot>,
        query_retrieved: Vec<String>,
        language_name: impl Into<String>,
        separator: impl Into<String>,
    ) -> Self {
        PromptSpec {
            shots,
            query_retrieved,
            language_name: language_name.into(),
            separator: separator.into(),
        }
    }
}

fn closing(out: &mut String, language: &str) {
    out.push_str("A creative short caption I can generate to describe this image in ");
    out.push_str(language);
    out.push_str(" is:");
}

fn retrieval_block(out: &mut String, captions: &[String], language: &str, sep: &str) {
    out.push_str(BOT_INTRO);
    out.push(' ');
    out.push_str(RETRIEVAL_LEAD);
    for c in captions {
        out.push_str(c);
        out.push_str(sep);
        out.push(' ');
    }
    closing(out, language);
}

fn finish_shot(out: &mut String, caption: &str, sep: &str) {
    out.push(' ');
    out.push_str(caption);
    out.push_str(sep);
    out.push(' ');
}

fn check_common(language: &str, sep: &str) -> Result<(), PromptError> {
    if language.is_empty() {
        return Err(PromptError::EmptyLanguage);
    }
    if sep.is_empty() {
        return Err(PromptError::EmptySeparator);
    }
    Ok(())
}

/// Renders the retrieval-augmented prompt.
pub fn build_retrieval_prompt(spec: &PromptSpec) -> Result<String, PromptError> {
    check_common(&spec.language_name, &spec.separator)?;
    if spec.query_retrieved.is_empty() {
        return Err(PromptError::NoRetrieved);
    }
    for (i, shot) in spec.shots.iter().enumerate() {
        shot.validate(i)?;
    }

    let mut out = String::new();
    for shot in &spec.shots {
        retrieval_block(&mut out, &shot.retrieved_texts, &spec.language_name, &spec.separator);
        finish_shot(&mut out, &shot.target_caption, &spec.separator);
    }
    retrieval_block(&mut out, &spec.query_retrieved, &spec.language_name, &spec.separator);
    Ok(out)
}

fn socratic_block(out: &mut String, ctx: &SocraticContext, language: &str) {
    out.push_str(BOT_INTRO);
    out.push(' ');
    let image_type = ctx.image_type.trim();
    if !image_type.is_empty() {
        out.push_str("This image is a ");
        out.push_str(image_type);
        out.push_str(". ");
    }
    if !ctx.people_count.trim().is_empty() {
        out.push_str("There ");
        out.push_str(ctx.people_count.trim());
        out.push_str(". ");
    }
    if !ctx.places.is_empty() {
        out.push_str("I think this photo was taken at a ");
        out.push_str(&join_alternatives(&ctx.places));
        out.push_str(". ");
    }
    if !ctx.objects.is_empty() {
        out.push_str("I think there might be a ");
        out.push_str(&ctx.objects.join(", "));
        out.push_str(" in this ");
        out.push_str(if image_type.is_empty() { "image" } else { image_type });
        out.push_str(". ");
    }
    closing(out, language);
}

/// "a", "a or b", "a, b, or c"
fn join_alternatives(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => format!("{}, or {last}", init.join(", ")),
    }
}

/// Renders the category-based socratic prompt. Every shot must carry a
/// [`SocraticContext`].
pub fn build_socratic_prompt(
    query: &SocraticContext,
    language_name: &str,
    shots: &[PromptShot],
    separator: &str,
) -> Result<String, PromptError> {
    check_common(language_name, separator)?;
    let mut out = String::new();
    for (i, shot) in shots.iter().enumerate() {
        let ctx = shot.socratic.as_ref().ok_or(PromptError::ShotWithoutContext(i))?;
        if shot.target_caption.trim().is_empty() {
            return Err(PromptError::ShotWithoutTarget(i));
        }
        socratic_block(&mut out, ctx, language_name);
        finish_shot(&mut out, &shot.target_caption, separator);
    }
    socratic_block(&mut out, query, language_name);
    Ok(out)
}

/// Language codes and the lowercase names used inside prompts. Covers the
/// 36 XM3600 languages.
pub const LANGUAGE_TABLE_VERSION: u32 = 1;
pub const LANGUAGES: &[(&str, &str)] = &[
    ("ar", "arabic"),
    ("bn", "bengali"),
    ("cs", "czech"),
    ("da", "danish"),
    ("de", "german"),
    ("el", "greek"),
    ("en", "english"),
    ("es", "spanish"),
    ("fa", "persian"),
    ("fi", "finnish"),
    ("fil", "filipino"),
    ("fr", "french"),
    ("he", "hebrew"),
    ("hi", "hindi"),
    ("hr", "croatian"),
    ("hu", "hungarian"),
    ("id", "indonesian"),
    ("it", "italian"),
    ("ja", "japanese"),
    ("ko", "korean"),
    ("mi", "maori"),
    ("nl", "dutch"),
    ("no", "norwegian"),
    ("pl", "polish"),
    ("pt", "portuguese"),
    ("quz", "quechua"),
    ("ro", "romanian"),
    ("ru", "russian"),
    ("sv", "swedish"),
    ("sw", "swahili"),
    ("te", "telugu"),
    ("th", "thai"),
    ("tr", "turkish"),
    ("uk", "ukrainian"),
    ("vi", "vietnamese"),
    ("zh", "chinese"),
];

pub fn language_display_name(code: &str) -> Result<&'static str, PromptError> {
    let code_lc = code.trim().to_ascii_lowercase();
    LANGUAGES
        .iter()
        .find(|(c, _)| *c == code_lc)
        .map(|(_, name)| *name)
        .ok_or_else(|| PromptError::UnknownLanguage {
            code: code.to_string(),
            supported: LANGUAGES.iter().map(|(c, _)| *c).collect::<Vec<_>>().join(", "),
        })
}
