use std::collections::BTreeMap;

use super::tokenize::TokenizedCaption;

/// N-gram counts of one caption for orders `1..=max_n`. Ordered maps keep
/// every downstream floating-point reduction in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    max_n: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NGramProfile {
    pub fn new(caption: &TokenizedCaption, max_n: usize) -> Self {
        let toks = caption.tokens();
        let mut counts = BTreeMap::new();
        for n in 1..=max_n {
            for gram in toks.windows(n) {
                *counts.entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
        NGramProfile { max_n, counts }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn count(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Entries of order `n`, in lexicographic order.
    pub fn order(&self, n: usize) -> impl Iterator<Item = (&Vec<String>, usize)> {
        self.counts.iter().filter(move |(g, _)| g.len() == n).map(|(g, c)| (g, *c))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<String>, usize)> {
        self.counts.iter().map(|(g, c)| (g, *c))
    }

    /// Sum of counts of order `n`, i.e. `max(0, len - n + 1)`.
    pub fn total(&self, n: usize) -> usize {
        self.order(n).map(|(_, c)| c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        let p = NGramProfile::new(&tokenize("the cat the cat"), 2);
        let g = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        assert_eq!(p.count(&g("the")), 2);
        assert_eq!(p.count(&g("the cat")), 2);
        assert_eq!(p.count(&g("cat the")), 1);
        assert_eq!(p.count(&g("dog")), 0);
    }

    proptest! {
        #[test]
        fn totals_match_length(words in proptest::collection::vec("[a-c]{1,2}", 0..15)) {
            let cap = tokenize(&words.join(" "));
            let p = NGramProfile::new(&cap, 4);
            for n in 1..=4 {
                prop_assert_eq!(p.total(n), (cap.len() + 1).saturating_sub(n));
            }
            prop_assert!(p.iter().all(|(_, c)| c >= 1));
        }
    }
}
