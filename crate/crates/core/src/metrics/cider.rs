//! CIDEr-D: TF-IDF weighted n-gram similarity with clipping and a Gaussian
//! length penalty.
//!
//! Document frequencies come from the reference sets (one document per
//! instance). For order n, each caption maps to a vector with weight
//! `count(g) * (ln |D| - ln max(1, df(g)))`. The per-reference similarity is
//! `sum_g min(h_g, r_g) * r_g / (|h| |r|)` scaled by
//! `exp(-(len_h - len_r)^2 / (2 sigma^2))`; orders are averaged, references
//! are averaged, and the result is multiplied by 10.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ngram::NGramProfile;
use super::tokenize::TokenizedCaption;
use super::MetricError;

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiderScores {
    pub per_instance: Vec<f64>,
    pub mean: f64,
}

/// Document-frequency table over a reference corpus.
#[derive(Debug, Clone)]
pub struct CiderD {
    log_docs: f64,
    df: BTreeMap<Vec<String>, usize>,
}

struct WeightedCaption {
    orders: Vec<BTreeMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    length: usize,
}

impl CiderD {
    pub fn from_references(references: &[Vec<TokenizedCaption>]) -> Result<Self, MetricError> {
        if references.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut df = BTreeMap::new();
        for refs in references {
            let grams: BTreeSet<Vec<String>> = refs
                .iter()
                .flat_map(|r| NGramProfile::new(r, CIDER_MAX_N).iter().map(|(g, _)| g.clone()).collect::<Vec<_>>())
                .collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Ok(CiderD {
            log_docs: (references.len() as f64).ln(),
            df,
        })
    }

    pub fn document_frequency(&self, gram: &[String]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    fn weigh(&self, caption: &TokenizedCaption) -> WeightedCaption {
        let profile = NGramProfile::new(caption, CIDER_MAX_N);
        let mut orders = vec![BTreeMap::new(); CIDER_MAX_N];
        let mut norms = vec![0.0; CIDER_MAX_N];
        for (g, count) in profile.iter() {
            let df = self.document_frequency(g).max(1) as f64;
            let w = count as f64 * (self.log_docs - df.ln());
            norms[g.len() - 1] += w * w;
            orders[g.len() - 1].insert(g.clone(), w);
        }
        for n in &mut norms {
            *n = n.sqrt();
        }
        WeightedCaption {
            orders,
            norms,
            length: caption.len(),
        }
    }

    fn similarity(hyp: &WeightedCaption, reference: &WeightedCaption) -> [f64; CIDER_MAX_N] {
        let delta = hyp.length as f64 - reference.length as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut out = [0.0; CIDER_MAX_N];
        for n in 0..CIDER_MAX_N {
            let mut val = 0.0;
            for (g, wh) in &hyp.orders[n] {
                if let Some(wr) = reference.orders[n].get(g) {
                    val += wh.min(*wr) * wr;
                }
            }
            if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
                val /= hyp.norms[n] * reference.norms[n];
            }
            out[n] = val * penalty;
        }
        out
    }

    /// Score of one hypothesis against its reference set.
    pub fn score(&self, hypothesis: &TokenizedCaption, references: &[TokenizedCaption]) -> Result<f64, MetricError> {
        if references.is_empty() {
            return Err(MetricError::NoReferences(0));
        }
        let h = self.weigh(hypothesis);
        let mut sum = [0.0; CIDER_MAX_N];
        for r in references {
            let sim = Self::similarity(&h, &self.weigh(r));
            for n in 0..CIDER_MAX_N {
                sum[n] += sim[n];
            }
        }
        let mean_over_n = sum.iter().sum::<f64>() / CIDER_MAX_N as f64;
        Ok(mean_over_n / references.len() as f64 * CIDER_SCALE)
    }
}

/// Per-instance CIDEr-D with document frequencies taken from `references`.
pub fn cider_d(
    hypotheses: &[TokenizedCaption],
    references: &[Vec<TokenizedCaption>],
) -> Result<CiderScores, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let model = CiderD::from_references(references)?;
    let mut per_instance = Vec::with_capacity(hypotheses.len());
    for (i, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        per_instance.push(model.score(h, r).map_err(|_| MetricError::NoReferences(i))?);
    }
    let mean = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
    Ok(CiderScores { per_instance, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn one_document_corpus_scores_zero() {
        let h = vec![tokenize("a dog runs on the grass")];
        let r = vec![vec![tokenize("a dog runs on the grass")]];
        let s = cider_d(&h, &r).unwrap();
        assert_eq!(s.per_instance, vec![0.0]);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let h = vec![tokenize("zebra zebra"), tokenize("a cat")];
        let r = vec![vec![tokenize("a dog")], vec![tokenize("a cat")]];
        assert_eq!(cider_d(&h, &r).unwrap().per_instance[0], 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(cider_d(&[], &[]), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn distinctive_match_scores_positive_and_bounded() {
        let h = vec![tokenize("a red bus on the street"), tokenize("two cats on a bed")];
        let r = vec![
            vec![tokenize("a red bus on the street"), tokenize("a bus driving down a street")],
            vec![tokenize("two cats sleeping on a bed")],
        ];
        let s = cider_d(&h, &r).unwrap();
        assert!(s.per_instance.iter().all(|&x| x > 0.0 && x <= 10.0), "{s:?}");
    }
}
