//! Protocol conformance checks for any [`Provider`], run against the raw
//! backend (not through the gateway, which would mask violations).

use std::io::Cursor;

use serde::Serialize;

use super::{GenerationParams, Provider, UNIT_NORM_TOLERANCE};
use crate::prompt::{build_retrieval_prompt, PromptSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConformanceCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// A small solid-color PNG used to probe image embedding.
pub fn probe_png(rgb: [u8; 3]) -> Vec<u8> {
    let img = image::RgbImage::from_pixel(8, 8, image::Rgb(rgb));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("encoding an in-memory png cannot fail");
    out.into_inner()
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn run_conformance(provider: &dyn Provider) -> ConformanceReport {
    let mut checks = Vec::new();
    let mut check = |name: &'static str, result: Result<(), String>| {
        checks.push(ConformanceCheck {
            name,
            passed: result.is_ok(),
            detail: result.err().unwrap_or_default(),
        });
    };

    let manifest = match (provider.manifest(), provider.manifest()) {
        (Ok(a), Ok(b)) => {
            check(
                "manifest_stable",
                if a == b { Ok(()) } else { Err(format!("{a:?} != {b:?}")) },
            );
            a
        }
        (Err(e), _) | (_, Err(e)) => {
            check("manifest_stable", Err(e.to_string()));
            return ConformanceReport { checks };
        }
    };
    let dim = manifest.embedding_dimension;

    let texts = vec!["a dog".to_string(), "a spreadsheet".to_string(), "a dog".to_string()];
    match provider.embed_texts(&texts) {
        Ok(vs) => {
            check(
                "text_embedding_count",
                if vs.len() == texts.len() { Ok(()) } else { Err(format!("{} vectors for {} texts", vs.len(), texts.len())) },
            );
            check(
                "text_embedding_dimension",
                match vs.iter().find(|v| v.len() != dim) {
                    None => Ok(()),
                    Some(v) => Err(format!("vector of length {} vs manifest {dim}", v.len())),
                },
            );
            check(
                "text_embedding_unit_norm",
                match vs.iter().map(|v| norm(v)).find(|n| (n - 1.0).abs() > UNIT_NORM_TOLERANCE) {
                    None => Ok(()),
                    Some(n) => Err(format!("norm {n}")),
                },
            );
            check(
                "text_embedding_deterministic",
                if vs.len() == 3 && vs[0] == vs[2] { Ok(()) } else { Err("identical texts gave different vectors".into()) },
            );
        }
        Err(e) => check("text_embedding_count", Err(e.to_string())),
    }

    match provider.embed_image(&probe_png([200, 40, 40])) {
        Ok(v) => {
            check(
                "image_embedding_dimension",
                if v.len() == dim { Ok(()) } else { Err(format!("length {} vs manifest {dim}", v.len())) },
            );
            let n = norm(&v);
            check(
                "image_embedding_unit_norm",
                if (n - 1.0).abs() <= UNIT_NORM_TOLERANCE { Ok(()) } else { Err(format!("norm {n}")) },
            );
        }
        Err(e) => check("image_embedding_dimension", Err(e.to_string())),
    }

    let prompt = build_retrieval_prompt(&PromptSpec::new(
        vec![],
        vec!["a dog running on the grass".into(), "a brown dog playing in a park".into()],
        "english",
        manifest.eos_token.clone(),
    ))
    .expect("static prompt is valid");
    let params = GenerationParams {
        num_candidates: 3,
        beam_size: 3,
        max_new_tokens: 20,
        stop_token: manifest.eos_token.clone(),
    };
    match provider.generate(&prompt, &params) {
        Ok(cands) => {
            check(
                "exact_candidate_count",
                if cands.len() == 3 { Ok(()) } else { Err(format!("{} candidates", cands.len())) },
            );
            check(
                "scores_non_increasing",
                if cands.windows(2).all(|w| w[0].score >= w[1].score) { Ok(()) } else { Err("scores increase".into()) },
            );
            check(
                "stop_token_truncated",
                match cands.iter().find(|c| c.text.contains(&manifest.eos_token)) {
                    None => Ok(()),
                    Some(c) => Err(format!("candidate contains stop token: {:?}", c.text)),
                },
            );
        }
        Err(e) => check("exact_candidate_count", Err(e.to_string())),
    }

    ConformanceReport { checks }
}
