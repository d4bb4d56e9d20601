//! Quadratic-cost ground truth: dense attention, exact top-k token masks,
//! attention restricted to an explicit mask, and mask-quality metrics.
//!
//! Everything here is deliberately simple and O(T^2); the estimator and the
//! streaming kernel are validated against this module.
//!
//! When the query count is smaller than the key count, queries are treated as
//! the suffix of the key sequence: query row `i` sits at global position
//! `t_k - t_q + i`, which is what both the prompt pass (`t_q == t_k`) and
//! single-row decode steps need.

use crate::error::{Error, Result};
use crate::tensor::{dot_f64, Tensor2D};

/// Per-query-row sorted, deduplicated key token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    rows: Vec<Vec<usize>>,
}

impl TokenMask {
    /// Sorts and deduplicates each row.
    pub fn new(mut rows: Vec<Vec<usize>>) -> Self {
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Full causal mask: row at position `p` selects every token up to `p`.
    pub fn full_causal(t_q: usize, t_k: usize) -> Self {
        let offset = t_k - t_q;
        Self {
            rows: (0..t_q).map(|i| (0..=offset + i).collect()).collect(),
        }
    }
}

/// Row-level mask quality relative to the exact top-k selection.
#[derive(Debug, Clone)]
pub struct MaskMetrics {
    pub recall_per_row: Vec<f64>,
    pub mass_per_row: Vec<f64>,
    pub mean_recall: f64,
    pub mean_mass: f64,
}

fn check_qk(q: &Tensor2D, k: &Tensor2D, causal: bool) -> Result<usize> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if causal && q.rows() > k.rows() {
        return Err(Error::ShapeMismatch(format!(
            "causal attention needs t_q <= t_k, got {} > {}",
            q.rows(),
            k.rows()
        )));
    }
    Ok(k.cols())
}

/// Number of keys visible to query row `i` (all of them when non-causal).
fn visible(i: usize, t_q: usize, t_k: usize, causal: bool) -> usize {
    if causal {
        t_k - t_q + i + 1
    } else {
        t_k
    }
}

/// Scaled scores for one query row against keys `[0, bound)`, in `f64`.
fn row_scores(q: &Tensor2D, k: &Tensor2D, i: usize, bound: usize) -> Vec<f64> {
    let scale = 1.0 / (k.cols() as f64).sqrt();
    (0..bound).map(|j| dot_f64(q.row(i), k.row(j)) * scale).collect()
}

fn softmax_inplace(scores: &mut [f64]) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// softmax(Q K^T / sqrt(d)) V with optional causal masking.
pub fn dense_attention(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D, causal: bool) -> Result<Tensor2D> {
    check_qk(q, k, causal)?;
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "key count {} != value count {}",
            k.rows(),
            v.rows()
        )));
    }
    let mut out = Tensor2D::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let bound = visible(i, q.rows(), k.rows(), causal);
        let mut probs = row_scores(q, k, i, bound);
        softmax_inplace(&mut probs);
        let mut acc = vec![0.0f64; v.cols()];
        for (j, &p) in probs.iter().enumerate() {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += p * v.get(j, c) as f64;
            }
        }
        for (c, a) in acc.iter().enumerate() {
            out.set(i, c, *a as f32);
        }
    }
    Ok(out)
}

/// Exact per-row top-k token selection; ties break toward the smaller index.
pub fn exact_topk_mask(q: &Tensor2D, k: &Tensor2D, budget: usize, causal: bool) -> Result<TokenMask> {
    if budget == 0 {
        return Err(Error::InvalidConfig("top-k budget must be >= 1".into()));
    }
    check_qk(q, k, causal)?;
    let mut rows = Vec::with_capacity(q.rows());
    for i in 0..q.rows() {
        let bound = visible(i, q.rows(), k.rows(), causal);
        let scores = row_scores(q, k, i, bound);
        let mut idx: Vec<usize> = (0..bound).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        idx.truncate(budget.min(bound));
        idx.sort_unstable();
        rows.push(idx);
    }
    Ok(TokenMask { rows })
}

/// Attention with the row softmax restricted to the masked entries.
///
/// A row with an empty mask yields a zero vector and logs a warning.
pub fn masked_attention(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D, mask: &TokenMask) -> Result<Tensor2D> {
    check_qk(q, k, false)?;
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "key count {} != value count {}",
            k.rows(),
            v.rows()
        )));
    }
    if mask.len() != q.rows() {
        return Err(Error::ShapeMismatch(format!(
            "mask rows {} != query rows {}",
            mask.len(),
            q.rows()
        )));
    }
    let scale = 1.0 / (k.cols() as f64).sqrt();
    let mut out = Tensor2D::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let sel = mask.row(i);
        if sel.is_empty() {
            log::warn!("masked_attention: empty mask row {i}, emitting zeros");
            continue;
        }
        if let Some(&j) = sel.iter().find(|&&j| j >= k.rows()) {
            return Err(Error::IndexOutOfRange(format!(
                "mask row {i} selects key {j} of {}",
                k.rows()
            )));
        }
        let mut probs: Vec<f64> =
            sel.iter().map(|&j| dot_f64(q.row(i), k.row(j)) * scale).collect();
        softmax_inplace(&mut probs);
        let mut acc = vec![0.0f64; v.cols()];
        for (&j, &p) in sel.iter().zip(probs.iter()) {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += p * v.get(j, c) as f64;
            }
        }
        for (c, a) in acc.iter().enumerate() {
            out.set(i, c, *a as f32);
        }
    }
    Ok(out)
}

/// Recall against the exact top-k selection and covered attention mass,
/// per row and averaged.
pub fn mask_metrics(
    estimated: &TokenMask,
    q: &Tensor2D,
    k: &Tensor2D,
    budget: usize,
    causal: bool,
) -> Result<MaskMetrics> {
    check_qk(q, k, causal)?;
    if estimated.len() != q.rows() {
        return Err(Error::ShapeMismatch(format!(
            "mask rows {} != query rows {}",
            estimated.len(),
            q.rows()
        )));
    }
    let exact = exact_topk_mask(q, k, budget, causal)?;
    let mut recall_per_row = Vec::with_capacity(q.rows());
    let mut mass_per_row = Vec::with_capacity(q.rows());
    for i in 0..q.rows() {
        let bound = visible(i, q.rows(), k.rows(), causal);
        let mut probs = row_scores(q, k, i, bound);
        softmax_inplace(&mut probs);
        let sel = estimated.row(i);
        let truth = exact.row(i);
        let hit = sel.iter().filter(|j| truth.binary_search(j).is_ok()).count();
        recall_per_row.push(hit as f64 / truth.len() as f64);
        let mass: f64 = sel.iter().filter(|&&j| j < bound).map(|&j| probs[j]).sum();
        mass_per_row.push(mass);
    }
    let n = q.rows() as f64;
    Ok(MaskMetrics {
        mean_recall: recall_per_row.iter().sum::<f64>() / n,
        mean_mass: mass_per_row.iter().sum::<f64>() / n,
        recall_per_row,
        mass_per_row,
    })
}
