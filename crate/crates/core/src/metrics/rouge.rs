use super::tokenize::TokenizedCaption;
use super::MetricError;

pub const ROUGE_BETA: f64 = 1.2;

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-score against a reference set. Precision and recall are each
/// maximized over references before combining.
pub fn rouge_l(hypothesis: &TokenizedCaption, references: &[TokenizedCaption]) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences(0));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut p_max: f64 = 0.0;
    let mut r_max: f64 = 0.0;
    for r in references {
        let lcs = lcs_len(hypothesis.tokens(), r.tokens()) as f64;
        p_max = p_max.max(lcs / hypothesis.len() as f64);
        if !r.is_empty() {
            r_max = r_max.max(lcs / r.len() as f64);
        }
    }
    if p_max == 0.0 || r_max == 0.0 {
        return Ok(0.0);
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p_max * r_max / (r_max + b2 * p_max))
}

/// Mean ROUGE-L over instances.
pub fn rouge_l_corpus(
    hypotheses: &[TokenizedCaption],
    references: &[Vec<TokenizedCaption>],
) -> Result<f64, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (i, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        sum += rouge_l(h, r).map_err(|_| MetricError::NoReferences(i))?;
    }
    Ok(sum / hypotheses.len() as f64)
}
