use std::collections::BTreeMap;

use super::ngram::NGramProfile;
use super::tokenize::TokenizedCaption;
use super::MetricError;

/// Corpus statistics for BLEU, kept so callers can inspect the parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    pub clipped: Vec<usize>,
    pub totals: Vec<usize>,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.clipped[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (h, r) = (self.hypothesis_length as f64, self.reference_length as f64);
        if self.hypothesis_length == 0 {
            0.0
        } else if h < r {
            (1.0 - r / h).exp()
        } else {
            1.0
        }
    }

    /// Uniform-weight geometric mean of the precisions times the brevity
    /// penalty. Unsmoothed: any zero precision gives 0.
    pub fn score(&self) -> f64 {
        let max_n = self.totals.len();
        let mut log_sum = 0.0;
        for n in 1..=max_n {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / max_n as f64).exp()
    }
}

/// Length of the reference closest to `hyp_len`; ties go to the shorter one.
fn closest_ref_length(hyp_len: usize, refs: &[TokenizedCaption]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .unwrap_or(0)
}

pub fn bleu_stats(
    hypotheses: &[TokenizedCaption],
    references: &[Vec<TokenizedCaption>],
    max_n: usize,
) -> Result<BleuStats, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if max_n == 0 {
        return Err(MetricError::InvalidOrder(max_n));
    }
    let mut stats = BleuStats {
        clipped: vec![0; max_n],
        totals: vec![0; max_n],
        hypothesis_length: 0,
        reference_length: 0,
    };
    for (i, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(MetricError::NoReferences(i));
        }
        stats.hypothesis_length += hyp.len();
        stats.reference_length += closest_ref_length(hyp.len(), refs);

        let hp = NGramProfile::new(hyp, max_n);
        let mut max_ref: BTreeMap<&Vec<String>, usize> = BTreeMap::new();
        let ref_profiles: Vec<NGramProfile> = refs.iter().map(|r| NGramProfile::new(r, max_n)).collect();
        for rp in &ref_profiles {
            for (g, c) in rp.iter() {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in hp.iter() {
            let n = g.len();
            stats.totals[n - 1] += c;
            stats.clipped[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
        }
    }
    Ok(stats)
}

/// Corpus-level BLEU with clipped n-gram precision for orders `1..=max_n`.
pub fn bleu(
    hypotheses: &[TokenizedCaption],
    references: &[Vec<TokenizedCaption>],
    max_n: usize,
) -> Result<f64, MetricError> {
    Ok(bleu_stats(hypotheses, references, max_n)?.score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    fn t(s: &str) -> TokenizedCaption {
        tokenize(s)
    }

    #[test]
    fn perfect_match() {
        let h = vec![t("a man riding a horse on the beach")];
        let r = vec![vec![t("a man riding a horse on the beach")]];
        assert_eq!(bleu(&h, &r, 4).unwrap(), 1.0);
        assert_eq!(bleu(&h, &r, 1).unwrap(), 1.0);
    }

    #[test]
    fn no_overlap() {
        let h = vec![t("zebra")];
        let r = vec![vec![t("a cat")]];
        assert_eq!(bleu(&h, &r, 1).unwrap(), 0.0);
    }

    #[test]
    fn mismatch_and_missing_refs() {
        assert!(matches!(
            bleu(&[t("a")], &[], 1),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(bleu(&[t("a")], &[vec![]], 1), Err(MetricError::NoReferences(0))));
    }

    #[test]
    fn closest_length_tie_prefers_shorter() {
        assert_eq!(closest_ref_length(5, &[t("a b c d"), t("a b c d e f")]), 4);
        assert_eq!(closest_ref_length(5, &[t("a b c d e f g"), t("a b c d e f")]), 6);
    }

    #[test]
    fn clipping() {
        // "the the the the" vs "the cat": clipped unigram = 1 of 4.
        let s = bleu_stats(&[t("the the the the")], &[vec![t("the cat")]], 1).unwrap();
        assert_eq!(s.clipped, vec![1]);
        assert_eq!(s.totals, vec![4]);
        assert_eq!(s.score(), 0.25);
    }
}
