//! Caption evaluation: tokenizer, BLEU-1/4, ROUGE-L and CIDEr-D, plus
//! whole-run reports.

mod bleu;
mod cider;
mod ngram;
mod rouge;
mod tokenize;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_stats, BleuStats};
pub use cider::{cider_d, CiderD, CiderScores, CIDER_MAX_N, CIDER_SCALE, CIDER_SIGMA};
pub use ngram::NGramProfile;
pub use rouge::{lcs_len, rouge_l, rouge_l_corpus, ROUGE_BETA};
pub use tokenize::{is_cjk, tokenize, TokenizedCaption, SPLIT_PUNCTUATION};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("instance {0} has no references")]
    NoReferences(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("no references for prediction id `{0}`")]
    MissingReferences(String),
    #[error("duplicate prediction id `{0}`")]
    DuplicatePrediction(String),
    #[error("no predictions")]
    NoPredictions,
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu1: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "ciderD")]
    pub cider_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    #[serde(rename = "ciderD")]
    pub cider_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub instances: usize,
    pub scores: CorpusScores,
    pub per_instance: Vec<InstanceScore>,
}

/// One caption per instance, with its reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
}

/// Scores already-paired instances. Both sides go through [`tokenize`].
pub fn evaluate(instances: &[EvalInstance], language: &str) -> Result<EvalReport, MetricError> {
    if instances.is_empty() {
        return Err(MetricError::NoPredictions);
    }
    let hyps: Vec<TokenizedCaption> = instances.iter().map(|i| tokenize(&i.hypothesis)).collect();
    let refs: Vec<Vec<TokenizedCaption>> = instances
        .iter()
        .map(|i| i.references.iter().map(|r| tokenize(r)).collect())
        .collect();
    let cider = cider_d(&hyps, &refs)?;
    Ok(EvalReport {
        language: language.to_string(),
        instances: instances.len(),
        scores: CorpusScores {
            bleu1: bleu(&hyps, &refs, 1)?,
            bleu4: bleu(&hyps, &refs, 4)?,
            rouge_l: rouge_l_corpus(&hyps, &refs)?,
            cider_d: cider.mean,
        },
        per_instance: instances
            .iter()
            .zip(cider.per_instance)
            .map(|(i, c)| InstanceScore {
                id: i.id.clone(),
                cider_d: c,
            })
            .collect(),
    })
}

fn input_err(path: &Path, message: impl ToString) -> MetricError {
    MetricError::Input {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

#[derive(Deserialize)]
struct CocoCaptions {
    annotations: Vec<CocoCaption>,
}

#[derive(Deserialize)]
struct CocoCaption {
    image_id: serde_json::Value,
    caption: String,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Groups COCO-style `annotations` by `image_id`, keeping file order within
/// each image.
pub fn references_from_coco(json: &str) -> Result<BTreeMap<String, Vec<String>>, serde_json::Error> {
    let doc: CocoCaptions = serde_json::from_str(json)?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for a in doc.annotations {
        out.entry(id_string(&a.image_id)).or_default().push(a.caption);
    }
    Ok(out)
}

/// Reads either an `{id: [captions]}` object or COCO annotation JSON.
pub fn load_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>, MetricError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
    if value.get("annotations").is_some_and(|a| a.is_array()) {
        return references_from_coco(&text).map_err(|e| input_err(path, e));
    }
    serde_json::from_value(value).map_err(|e| input_err(path, e))
}

/// `(id, caption)` pairs from a predictions jsonl. Accepts caption records
/// (`image_id` + `chosen`) or plain `id` + `caption` lines; manifest lines
/// are skipped.
pub fn load_predictions(path: &Path) -> Result<Vec<(String, String)>, MetricError> {
    let file = std::fs::File::open(path).map_err(|e| input_err(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| input_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| input_err(path, format!("line {}: {e}", lineno + 1)))?;
        if v.get("manifest").is_some() {
            continue;
        }
        let id = v
            .get("image_id")
            .or_else(|| v.get("id"))
            .map(id_string)
            .ok_or_else(|| input_err(path, format!("line {}: missing image_id", lineno + 1)))?;
        let caption = v
            .get("chosen")
            .or_else(|| v.get("caption"))
            .and_then(|c| c.as_str())
            .ok_or_else(|| input_err(path, format!("line {}: missing chosen caption", lineno + 1)))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(MetricError::DuplicatePrediction(id));
        }
        out.push((id, caption));
    }
    if out.is_empty() {
        return Err(MetricError::NoPredictions);
    }
    Ok(out)
}

/// Pairs predictions with references; every prediction id must have a
/// reference set.
pub fn pair_instances(
    predictions: Vec<(String, String)>,
    references: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<EvalInstance>, MetricError> {
    predictions
        .into_iter()
        .map(|(id, hypothesis)| match references.get(&id) {
            Some(refs) if !refs.is_empty() => Ok(EvalInstance {
                id,
                hypothesis,
                references: refs.clone(),
            }),
            _ => Err(MetricError::MissingReferences(id)),
        })
        .collect()
}

pub fn evaluate_run(predictions: &Path, references: &Path, language: &str) -> Result<EvalReport, MetricError> {
    let preds = load_predictions(predictions)?;
    let refs = load_references(references)?;
    evaluate(&pair_instances(preds, &refs)?, language)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, h: &str, refs: &[&str]) -> EvalInstance {
        EvalInstance {
            id: id.into(),
            hypothesis: h.into(),
            references: refs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn predictions_equal_first_reference() {
        let instances = vec![
            inst("1", "a man riding a wave on a surfboard", &["a man riding a wave on a surfboard", "a surfer in the ocean"]),
            inst("2", "two dogs playing in the snow together", &["two dogs playing in the snow together", "dogs in snow"]),
        ];
        let r = evaluate(&instances, "en").unwrap();
        assert_eq!(r.scores.bleu1, 1.0);
        assert!((r.scores.bleu4 - 1.0).abs() < 1e-12);
        assert!((r.scores.rouge_l - 1.0).abs() < 1e-12);
        assert_eq!(r.per_instance.len(), 2);
    }

    #[test]
    fn missing_reference_names_the_id() {
        let refs = BTreeMap::from([("a".to_string(), vec!["x".to_string()])]);
        let err = pair_instances(vec![("b".into(), "y".into())], &refs).unwrap_err();
        assert_eq!(err.to_string(), "no references for prediction id `b`");
    }

    #[test]
    fn coco_conversion_groups_by_image() {
        let json = r#"{"annotations":[{"image_id":7,"caption":"a"},{"image_id":"x","caption":"b"},{"image_id":7,"caption":"c"}]}"#;
        let refs = references_from_coco(json).unwrap();
        assert_eq!(refs["7"], vec!["a", "c"]);
        assert_eq!(refs["x"], vec!["b"]);
    }

    #[test]
    fn empty_instances_rejected() {
        assert!(matches!(evaluate(&[], "en"), Err(MetricError::NoPredictions)));
    }
}
