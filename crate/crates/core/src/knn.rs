//! Exact top-K retrieval by inner product over a frozen [`EmbeddingStore`].
//!
//! Scores are accumulated in f64 with a fixed lane layout, so a given
//! (query, row) pair always produces the same bits. Rows are scanned in
//! fixed-size blocks; each block keeps its own top-k and the partial lists
//! are merged in block order under a total ordering (score descending, then
//! entry id ascending). The result does not depend on how blocks are
//! scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Embedding, EmbeddingStore};

/// Rows per scan block.
const BLOCK_ROWS: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("cannot search an empty store")]
    EmptyStore,
    #[error("query dimension {actual} does not match store dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<SearchError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry_id: u64,
    pub score: f64,
    pub rank: usize,
}

/// Inner product of two equal-length f32 slices, accumulated in f64 over
/// eight fixed lanes.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        return unsafe { dot_avx2(a, b) };
    }
    dot_lanes(a, b)
}

#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// [`dot_lanes`] with lanes 0..4 and 4..8 held in two AVX registers. Multiply
/// and add stay separate (no FMA), so the result is bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f64 {
    use std::arch::x86_64::*;
    debug_assert_eq!(a.len(), b.len());
    let len = a.len().min(b.len());
    let chunks = len / 8;
    let mut lo = _mm256_setzero_pd();
    let mut hi = _mm256_setzero_pd();
    for c in 0..chunks {
        let xa = _mm256_loadu_ps(a.as_ptr().add(c * 8));
        let xb = _mm256_loadu_ps(b.as_ptr().add(c * 8));
        let (alo, ahi) = (_mm256_cvtps_pd(_mm256_castps256_ps128(xa)), _mm256_cvtps_pd(_mm256_extractf128_ps::<1>(xa)));
        let (blo, bhi) = (_mm256_cvtps_pd(_mm256_castps256_ps128(xb)), _mm256_cvtps_pd(_mm256_extractf128_ps::<1>(xb)));
        lo = _mm256_add_pd(lo, _mm256_mul_pd(alo, blo));
        hi = _mm256_add_pd(hi, _mm256_mul_pd(ahi, bhi));
    }
    let mut acc = [0f64; 8];
    _mm256_storeu_pd(acc.as_mut_ptr(), lo);
    _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi);
    let mut tail = 0f64;
    for i in chunks * 8..len {
        tail += f64::from(a[i]) * f64::from(b[i]);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    id: u64,
}

impl Scored {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
// Max-heap on rank order: the heap top is the worst kept hit.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

#[inline(always)]
fn scan_rows(
    rows: &[f32],
    dim: usize,
    first_id: u64,
    query: &[f32],
    k: usize,
    dot: impl Fn(&[f32], &[f32]) -> f64,
) -> Vec<Scored> {
    let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
    for (i, row) in rows.chunks_exact(dim).enumerate() {
        let cand = Scored {
            score: dot(query, row),
            id: first_id + i as u64,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_vec()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn scan_rows_avx2(rows: &[f32], dim: usize, first_id: u64, query: &[f32], k: usize) -> Vec<Scored> {
    scan_rows(rows, dim, first_id, query, k, |a, b| dot_avx2(a, b))
}

fn scan_block(rows: &[f32], dim: usize, first_id: u64, query: &[f32], k: usize) -> Vec<Scored> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { scan_rows_avx2(rows, dim, first_id, query, k) };
    }
    scan_rows(rows, dim, first_id, query, k, dot_lanes)
}

fn check(store: &EmbeddingStore, query: &Embedding, k: usize) -> Result<(), SearchError> {
    if store.is_empty() {
        return Err(SearchError::EmptyStore);
    }
    if query.dimension() != store.dimension() {
        return Err(SearchError::Dimension {
            expected: store.dimension(),
            actual: query.dimension(),
        });
    }
    if k == 0 {
        return Err(SearchError::ZeroK);
    }
    Ok(())
}

/// The `min(k, len)` entries with the highest inner product against `query`.
pub fn top_k(store: &EmbeddingStore, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit>, SearchError> {
    check(store, query, k)?;
    let dim = store.dimension();
    let k = k.min(store.len());
    let q = query.values();
    let block_len = BLOCK_ROWS * dim;

    let partials: Vec<Vec<Scored>> = if store.len() > BLOCK_ROWS && rayon::current_num_threads() > 1 {
        store
            .vectors()
            .par_chunks(block_len)
            .enumerate()
            .map(|(b, rows)| scan_block(rows, dim, (b * BLOCK_ROWS) as u64, q, k))
            .collect()
    } else {
        store
            .vectors()
            .chunks(block_len)
            .enumerate()
            .map(|(b, rows)| scan_block(rows, dim, (b * BLOCK_ROWS) as u64, q, k))
            .collect()
    };

    let mut merged: Vec<Scored> = partials.into_iter().flatten().collect();
    merged.sort_unstable_by(Scored::rank_cmp);
    merged.truncate(k);
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(rank, s)| RetrievalHit {
            entry_id: s.id,
            score: s.score,
            rank,
        })
        .collect())
}

/// [`top_k`] for each query, results in input order.
pub fn top_k_batch(
    store: &EmbeddingStore,
    queries: &[Embedding],
    k: usize,
) -> Result<Vec<Vec<RetrievalHit>>, SearchError> {
    queries
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            top_k(store, q, k).map_err(|e| SearchError::InBatch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

impl EmbeddingStore {
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit>, SearchError> {
        top_k(self, query, k)
    }
}
