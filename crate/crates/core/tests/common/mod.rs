//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod server;

use std::collections::HashMap;
use std::path::PathBuf;

use rand::Rng;
use retrocap::knn::dot_f64;
use retrocap::{Embedding, EmbeddingStore, StoreBuilder};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn random_vector(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Random store; with `dup_rate` > 0 some rows repeat earlier vectors so
/// exact score ties occur.
pub fn random_store(rng: &mut impl Rng, n: usize, d: usize, dup_rate: f64) -> EmbeddingStore {
    let mut b = StoreBuilder::new(d, "test");
    let mut raws: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let raw = if i > 0 && rng.gen_bool(dup_rate) {
            raws[rng.gen_range(0..i)].clone()
        } else {
            random_vector(rng, d)
        };
        b.push(format!("caption {i}"), "en", "rand", &raw).unwrap();
        raws.push(raw);
    }
    b.freeze()
}

pub fn random_query(rng: &mut impl Rng, d: usize) -> Embedding {
    retrocap::normalize(&random_vector(rng, d)).unwrap()
}

/// Full scan, full stable sort by (score desc, id asc), then truncate.
pub fn brute_top_k(store: &EmbeddingStore, query: &Embedding, k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = (0..store.len() as u64)
        .map(|id| (id, dot_f64(store.vector(id).unwrap(), query.values())))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k.min(store.len()));
    all
}

/// Plain left-to-right f64 dot product.
pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// Independent CIDEr-D: dense TF-IDF vectors over an explicit n-gram
/// vocabulary, one pass per order.
pub fn oracle_cider_d(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let n_docs = refs.len() as f64;
    let mut per_order: Vec<Vec<f64>> = vec![vec![0.0; hyps.len()]; 4];
    for n in 1..=4 {
        let mut vocab: HashMap<Vec<String>, usize> = HashMap::new();
        let intern = |g: &Vec<String>, vocab: &mut HashMap<Vec<String>, usize>| {
            let next = vocab.len();
            *vocab.entry(g.clone()).or_insert(next)
        };
        for h in hyps {
            for g in ngrams(h, n) {
                intern(&g, &mut vocab);
            }
        }
        for rs in refs {
            for r in rs {
                for g in ngrams(r, n) {
                    intern(&g, &mut vocab);
                }
            }
        }
        let mut df = vec![0usize; vocab.len()];
        for rs in refs {
            let mut seen = vec![false; vocab.len()];
            for r in rs {
                for g in ngrams(r, n) {
                    seen[vocab[&g]] = true;
                }
            }
            for (i, s) in seen.iter().enumerate() {
                if *s {
                    df[i] += 1;
                }
            }
        }
        let dense = |toks: &Vec<String>| {
            let mut v = vec![0.0f64; vocab.len()];
            for g in ngrams(toks, n) {
                v[vocab[&g]] += 1.0;
            }
            for (i, x) in v.iter_mut().enumerate() {
                *x *= n_docs.ln() - (df[i].max(1) as f64).ln();
            }
            v
        };
        for (i, (h, rs)) in hyps.iter().zip(refs).enumerate() {
            let hv = dense(h);
            let hn = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut total = 0.0;
            for r in rs {
                let rv = dense(r);
                let rn = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut num = 0.0;
                for j in 0..vocab.len() {
                    num += hv[j].min(rv[j]) * rv[j];
                }
                let mut sim = if hn != 0.0 && rn != 0.0 { num / (hn * rn) } else { num };
                let delta = h.len() as f64 - r.len() as f64;
                sim *= (-(delta * delta) / 72.0).exp();
                total += sim;
            }
            per_order[n - 1][i] = total / rs.len() as f64;
        }
    }
    (0..hyps.len())
        .map(|i| (0..4).map(|n| per_order[n][i]).sum::<f64>() / 4.0 * 10.0)
        .collect()
}

/// Random lowercase corpus over a small vocabulary so n-grams repeat.
pub fn random_corpus(rng: &mut impl Rng) -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    const WORDS: &[&str] = &[
        "a", "the", "dog", "cat", "on", "in", "red", "bus", "street", "man", "two", "table", "sits", "runs", "near",
    ];
    let sentence = |rng: &mut dyn rand::RngCore| -> Vec<String> {
        let len = rng.gen_range(1..=15);
        (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
    };
    let n = rng.gen_range(1..=10);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..n {
        hyps.push(sentence(rng));
        let m = rng.gen_range(1..=5);
        refs.push((0..m).map(|_| sentence(rng)).collect());
    }
    (hyps, refs)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// The fixture caption corpus embedded by the mock provider.
pub fn mock_store(gateway: &retrocap::Gateway) -> EmbeddingStore {
    let mut b = StoreBuilder::new(gateway.manifest().embedding_dimension, gateway.manifest().provider_id.clone());
    b.ingest_captions(
        &fixture("corpus/captions.jsonl"),
        retrocap::store::CaptionFormat::Jsonl,
        "fixture",
        "en",
        Some(gateway),
    )
    .unwrap();
    b.freeze()
}

pub const FIXTURE_IMAGES: &[&str] = &["beach", "forest", "kitchen", "street", "snow", "harbor", "market", "desk"];

pub fn fixture_image(name: &str) -> retrocap::ImageInput {
    retrocap::ImageInput::from_path(fixture(&format!("images/{name}.png")))
}

pub fn random_phrase(rng: &mut impl Rng) -> String {
    const WORDS: &[&str] = &["a", "dog", "on", "the", "beach", "two", "cats", "perro", "una", "mesa", "猫", "über"];
    let len = rng.gen_range(1..=8);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn random_prompt_spec(rng: &mut impl Rng, n: usize, k: usize) -> retrocap::PromptSpec {
    let shots = (0..n)
        .map(|_| retrocap::PromptShot {
            retrieved_texts: (0..rng.gen_range(1..=8)).map(|_| random_phrase(rng)).collect(),
            target_language: "spanish".into(),
            target_caption: random_phrase(rng),
            socratic: None,
        })
        .collect();
    let query = (0..k).map(|_| random_phrase(rng)).collect();
    retrocap::PromptSpec::new(shots, query, "spanish", "</s>")
}

/// Block count is N+1; separators number sum(K_i + 1) + K; the prompt ends
/// at `is:`; query captions appear in rank order.
pub fn check_template_algebra(spec: &retrocap::PromptSpec) -> Result<(), String> {
    let p = retrocap::build_retrieval_prompt(spec).map_err(|e| e.to_string())?;
    let blocks = p.matches(retrocap::prompt::BOT_INTRO).count();
    if blocks != spec.shots.len() + 1 {
        return Err(format!("{blocks} blocks for N={}", spec.shots.len()));
    }
    let seps = p.matches(spec.separator.as_str()).count();
    let expected: usize =
        spec.shots.iter().map(|s| s.retrieved_texts.len() + 1).sum::<usize>() + spec.query_retrieved.len();
    if seps != expected {
        return Err(format!("{seps} separators, expected {expected}"));
    }
    if !p.ends_with("is:") {
        return Err("prompt does not end at `is:`".into());
    }
    let last = &p[p.rfind(retrocap::prompt::BOT_INTRO).unwrap()..];
    let mut at = 0;
    for c in &spec.query_retrieved {
        let needle = format!("{c}{} ", spec.separator);
        match last[at..].find(&needle) {
            Some(i) => at += i + needle.len(),
            None => return Err(format!("query caption `{c}` out of order")),
        }
    }
    Ok(())
}
