//! Hierarchical estimation of the block-sparse attention mask.
//!
//! Keys are grouped into blocks of `b_k` rows and queries into blocks of
//! `b_q` rows. For each query block the estimator keeps a fixed number of
//! contiguous key-block ranges (nodes), repeatedly halves them, scores each
//! half by its first key block, and keeps the best halves, ending with one
//! key block per node. The selected blocks approximate the per-row top-k of
//! the score matrix at a log-linear number of score evaluations.

use serde::{Deserialize, Serialize};

use crate::counters::OpCounters;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::oracle::TokenMask;
use crate::tensor::Tensor2D;

/// Estimator and pipeline hyperparameters.
///
/// `full_depth` switches the iteration schedule: `false` stops a query block
/// as soon as every node has narrowed to a single key block; `true` always
/// runs `ceil(log2(visible key blocks))` iterations and scores two branch
/// tiles per node per iteration, mirroring the fixed-shape cost of a batched
/// kernel. Both schedules select identical masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HipConfig {
    /// Key-token budget per query row (excluding sink and window tokens).
    #[serde(default = "default_k")]
    pub k: usize,
    /// Query block size.
    #[serde(default = "default_b_q")]
    pub b_q: usize,
    /// Key block size.
    #[serde(default = "default_b_k")]
    pub b_k: usize,
    /// Restrict branch scoring to this many query components, when set.
    #[serde(default)]
    pub top_r: Option<usize>,
    /// Always-attended prefix tokens.
    #[serde(default = "default_sink")]
    pub sink_size: usize,
    /// Always-attended sliding window, inclusive of the query position.
    #[serde(default = "default_window")]
    pub window_size: usize,
    /// Leading layers that keep exact dense attention during decoding.
    #[serde(default = "default_l_d")]
    pub l_d: usize,
    /// Decode steps between mask re-estimations.
    #[serde(default = "default_r_m")]
    pub r_m: usize,
    #[serde(default)]
    pub full_depth: bool,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
}

fn default_k() -> usize {
    512
}
fn default_b_q() -> usize {
    32
}
fn default_b_k() -> usize {
    2
}
fn default_sink() -> usize {
    32
}
fn default_window() -> usize {
    128
}
fn default_l_d() -> usize {
    3
}
fn default_r_m() -> usize {
    8
}

impl Default for HipConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            b_q: default_b_q(),
            b_k: default_b_k(),
            top_r: None,
            sink_size: default_sink(),
            window_size: default_window(),
            l_d: default_l_d(),
            r_m: default_r_m(),
            full_depth: false,
            ensemble: None,
        }
    }
}

impl HipConfig {
    /// Number of ranges kept alive per query block.
    pub fn n_nodes(&self) -> usize {
        div_ceil(self.k, self.b_k)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.b_q == 0 || self.b_k == 0 {
            return Err(Error::InvalidConfig("block sizes must be >= 1".into()));
        }
        if self.k < self.b_k {
            return Err(Error::InvalidConfig(format!(
                "budget k={} smaller than key block size b_k={}",
                self.k, self.b_k
            )));
        }
        if self.r_m == 0 {
            return Err(Error::InvalidConfig("r_m must be >= 1".into()));
        }
        if let Some(r) = self.top_r {
            if r == 0 || r > d {
                return Err(Error::InvalidConfig(format!(
                    "top_r={r} outside [1, {d}]"
                )));
            }
        }
        if let Some(e) = &self.ensemble {
            e.validate()?;
        }
        Ok(())
    }
}

pub(crate) fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// ceil(log2(x)) with x >= 1.
pub(crate) fn ceil_log2(x: usize) -> u32 {
    debug_assert!(x >= 1);
    usize::BITS - (x - 1).leading_zeros()
}

/// Inclusive range of key-block indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRange {
    pub first: usize,
    pub last: usize,
}

impl BlockRange {
    pub fn new(first: usize, last: usize) -> Self {
        debug_assert!(first <= last);
        Self { first, last }
    }

    /// Number of key blocks covered; never zero.
    pub fn width(&self) -> usize {
        self.last - self.first + 1
    }
}

/// Ranges alive for one query block at one iteration; iteration 0 is the
/// initial partition.
///
/// From iteration 1 on, `scores` holds the recorded representative score of
/// each kept range, parallel to `ranges`; the initial partition has none.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub query_block: usize,
    pub iteration: usize,
    pub ranges: Vec<BlockRange>,
    pub scores: Vec<f64>,
}

/// Per-query-block selected key-block indices, with enough geometry to
/// expand back to token granularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    b_q: usize,
    b_k: usize,
    t_q: usize,
    t_k: usize,
    q_offset: usize,
    causal: bool,
    rows: Vec<Vec<usize>>,
}

impl BlockMask {
    pub fn b_q(&self) -> usize {
        self.b_q
    }

    pub fn b_k(&self) -> usize {
        self.b_k
    }

    pub fn t_q(&self) -> usize {
        self.t_q
    }

    pub fn t_k(&self) -> usize {
        self.t_k
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    /// Global position of query row 0 (queries are the key-sequence suffix).
    pub fn q_offset(&self) -> usize {
        self.q_offset
    }

    pub fn n_query_blocks(&self) -> usize {
        self.rows.len()
    }

    /// Selected key-block indices for one query block, sorted ascending.
    pub fn block_row(&self, qb: usize) -> &[usize] {
        &self.rows[qb]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub(crate) fn from_parts(
        b_q: usize,
        b_k: usize,
        t_q: usize,
        t_k: usize,
        q_offset: usize,
        causal: bool,
        rows: Vec<Vec<usize>>,
    ) -> Self {
        Self { b_q, b_k, t_q, t_k, q_offset, causal, rows }
    }

    /// Token indices of one selected key block, trimmed to `bound` (exclusive).
    fn block_tokens(&self, block: usize, bound: usize) -> std::ops::Range<usize> {
        let start = block * self.b_k;
        let end = ((block + 1) * self.b_k).min(bound);
        start..end.max(start)
    }

    /// Expands block selections to per-row token indices, applying the
    /// row-level causal bound.
    pub fn expand_to_token_mask(&self) -> TokenMask {
        let mut rows = Vec::with_capacity(self.t_q);
        for i in 0..self.t_q {
            let qb = i / self.b_q;
            let bound = if self.causal { self.q_offset + i + 1 } else { self.t_k };
            let mut toks = Vec::new();
            for &b in &self.rows[qb] {
                toks.extend(self.block_tokens(b, bound));
            }
            rows.push(toks);
        }
        TokenMask::new(rows)
    }

    /// Text form: one `qblock: b0,b1,...` line per query block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (qb, row) in self.rows.iter().enumerate() {
            let joined: Vec<String> = row.iter().map(|b| b.to_string()).collect();
            out.push_str(&format!("{qb}: {}\n", joined.join(",")));
        }
        out
    }
}

/// Key-block count visible to a query block whose last row sits at `last_pos`.
pub(crate) fn causal_block_bound(
    last_pos: usize,
    b_k: usize,
    n_key_blocks: usize,
    causal: bool,
) -> usize {
    if causal {
        (last_pos / b_k + 1).min(n_key_blocks)
    } else {
        n_key_blocks
    }
}

/// Splits an inclusive range at its rounded midpoint; single-block ranges
/// pass through unchanged.
pub fn split_node(range: BlockRange) -> (BlockRange, Option<BlockRange>) {
    if range.first == range.last {
        return (range, None);
    }
    let m = ((range.first + range.last) as f64 / 2.0).round() as usize;
    (BlockRange::new(range.first, m - 1), Some(BlockRange::new(m, range.last)))
}

fn split_node_perturbed(range: BlockRange, offset: i64) -> (BlockRange, Option<BlockRange>) {
    if range.first == range.last {
        return (range, None);
    }
    let mid = (range.first + range.last) as f64 / 2.0 + offset as f64;
    let m = (mid.round() as i64).clamp(range.first as i64 + 1, range.last as i64) as usize;
    (BlockRange::new(range.first, m - 1), Some(BlockRange::new(m, range.last)))
}

/// Largest reduced |q| components of a query block: the reduction is the
/// componentwise max of absolute values over the block's rows. Ties break
/// toward the smaller component index; the result is sorted ascending.
pub fn top_r_select(q: &Tensor2D, q_rows: std::ops::Range<usize>, r: usize) -> Vec<usize> {
    let d = q.cols();
    let r = r.min(d);
    let mut reduced = vec![0.0f32; d];
    for i in q_rows {
        for (c, m) in reduced.iter_mut().enumerate() {
            *m = m.max(q.get(i, c).abs());
        }
    }
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| reduced[b].total_cmp(&reduced[a]).then(a.cmp(&b)));
    idx.truncate(r);
    idx.sort_unstable();
    idx
}

/// Max dot product over the `q_rows` x `rep_block` score tile. With `comps`
/// set, every dot product reads only those components.
pub fn score_branch(
    q: &Tensor2D,
    q_rows: std::ops::Range<usize>,
    k: &Tensor2D,
    rep_block: usize,
    b_k: usize,
    comps: Option<&[usize]>,
) -> f64 {
    let kr_start = rep_block * b_k;
    let kr_end = ((rep_block + 1) * b_k).min(k.rows());
    let mut best = f64::NEG_INFINITY;
    for qi in q_rows {
        let qrow = q.row(qi);
        for kj in kr_start..kr_end {
            let krow = k.row(kj);
            let s = match comps {
                None => qrow.iter().zip(krow).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>(),
                Some(cs) => cs.iter().map(|&c| qrow[c] as f64 * krow[c] as f64).sum::<f64>(),
            };
            best = best.max(s);
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SplitRule {
    Deterministic,
    /// Uniform integer midpoint offset in [-magnitude, +magnitude], derived
    /// deterministically from (seed, query block, iteration, node index).
    Perturbed { magnitude: i64, seed: u64 },
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn perturbation(seed: u64, qb: usize, iteration: usize, node: usize, magnitude: i64) -> i64 {
    if magnitude == 0 {
        return 0;
    }
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ (qb as u64));
    h = splitmix64(h ^ (iteration as u64));
    h = splitmix64(h ^ (node as u64));
    let span = 2 * magnitude as u64 + 1;
    (h % span) as i64 - magnitude
}

/// Estimates the block mask; equivalent to
/// [`estimate_block_mask_traced`] without recording node snapshots.
pub fn estimate_block_mask(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    causal: bool,
    counters: &mut OpCounters,
) -> Result<BlockMask> {
    estimate_impl(q, k, cfg, causal, counters, SplitRule::Deterministic, None)
}

/// Same estimate, also returning every per-iteration node set (iteration 0
/// is the initial partition).
pub fn estimate_block_mask_traced(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    causal: bool,
    counters: &mut OpCounters,
) -> Result<(BlockMask, Vec<NodeSet>)> {
    let mut trace = Vec::new();
    let mask = estimate_impl(q, k, cfg, causal, counters, SplitRule::Deterministic, Some(&mut trace))?;
    Ok((mask, trace))
}

pub(crate) fn estimate_impl(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    causal: bool,
    counters: &mut OpCounters,
    rule: SplitRule,
    mut trace: Option<&mut Vec<NodeSet>>,
) -> Result<BlockMask> {
    if k.rows() == 0 {
        return Err(Error::ShapeMismatch("empty key tensor".into()));
    }
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    cfg.validate(q.cols())?;
    let t_q = q.rows();
    let t_k = k.rows();
    if causal && t_q > t_k {
        return Err(Error::ShapeMismatch(format!(
            "causal estimation needs t_q <= t_k, got {t_q} > {t_k}"
        )));
    }

    // Oversized block sizes are clamped, not rejected.
    let b_q = cfg.b_q.min(t_q);
    let b_k = cfg.b_k.min(t_k);
    let n_key_blocks = div_ceil(t_k, b_k);
    let n_query_blocks = div_ceil(t_q, b_q);
    let n_nodes = div_ceil(cfg.k, b_k);
    let q_offset = t_k - t_q.min(t_k);
    let d = q.cols();

    counters.mask_estimations += 1;

    let mut rows = Vec::with_capacity(n_query_blocks);
    for qb in 0..n_query_blocks {
        let q_start = qb * b_q;
        let q_end = ((qb + 1) * b_q).min(t_q);
        let last_pos = q_offset + q_end - 1;
        let bound = causal_block_bound(last_pos, b_k, n_key_blocks, causal);

        // Every visible key fits in the budget: keep them all.
        if bound * b_k <= cfg.k {
            rows.push((0..bound).collect());
            if let Some(t) = trace.as_deref_mut() {
                t.push(NodeSet {
                    query_block: qb,
                    iteration: 0,
                    ranges: (0..bound).map(|b| BlockRange::new(b, b)).collect(),
                    scores: Vec::new(),
                });
            }
            continue;
        }

        let comps: Option<Vec<usize>> =
            cfg.top_r.map(|r| top_r_select(q, q_start..q_end, r));
        let comp_width = comps.as_ref().map_or(d, |c| c.len()) as u64;

        // Initial equal partition of the visible blocks into n_nodes ranges.
        let mut ranges: Vec<BlockRange> = (0..n_nodes)
            .map(|j| {
                let f = (j as f64 * bound as f64 / n_nodes as f64).round() as usize;
                let l = ((j + 1) as f64 * bound as f64 / n_nodes as f64).round() as usize - 1;
                BlockRange::new(f, l)
            })
            .collect();
        if let Some(t) = trace.as_deref_mut() {
            t.push(NodeSet {
                query_block: qb,
                iteration: 0,
                ranges: ranges.clone(),
                scores: Vec::new(),
            });
        }

        let fixed_iterations = if cfg.full_depth { ceil_log2(bound) as usize } else { 0 };
        let mut iteration = 0usize;
        let mut branches: Vec<BlockRange> = Vec::with_capacity(2 * n_nodes);
        loop {
            let all_single = ranges.iter().all(|r| r.width() == 1);
            if all_single && (!cfg.full_depth || iteration >= fixed_iterations) {
                break;
            }
            iteration += 1;

            branches.clear();
            for (j, r) in ranges.iter().enumerate() {
                if r.width() == 1 {
                    branches.push(*r);
                    if cfg.full_depth {
                        // Fixed-shape schedule: the second branch slot of a
                        // single-block node is computed like any other tile.
                        branches.push(*r);
                    }
                    continue;
                }
                let (a, b) = match rule {
                    SplitRule::Deterministic => split_node(*r),
                    SplitRule::Perturbed { magnitude, seed } => {
                        let u = perturbation(seed, qb, iteration, j, magnitude);
                        split_node_perturbed(*r, u)
                    }
                };
                branches.push(a);
                branches.push(b.expect("multi-block range always splits"));
            }

            let mut scores = Vec::with_capacity(branches.len());
            for br in &branches {
                let kr = (br.first * b_k..((br.first + 1) * b_k).min(t_k)).len();
                counters.score_evaluations += ((q_end - q_start) * kr) as u64;
                counters.component_reads += ((q_end - q_start) * kr) as u64 * comp_width;
                scores.push(score_branch(q, q_start..q_end, k, br.first, b_k, comps.as_deref()));
            }

            let mut order: Vec<usize> = (0..branches.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then(branches[a].first.cmp(&branches[b].first))
            });
            // Branch ranges are disjoint, so `first` identifies a branch;
            // only the duplicated single-block slots collide.
            let mut seen = std::collections::HashSet::with_capacity(branches.len());
            let mut kept: Vec<(BlockRange, f64)> = Vec::with_capacity(n_nodes);
            for &i in &order {
                if kept.len() == n_nodes {
                    break;
                }
                if seen.insert(branches[i].first) {
                    kept.push((branches[i], scores[i]));
                }
            }
            kept.sort_by_key(|(r, _)| r.first);
            ranges = kept.iter().map(|(r, _)| *r).collect();

            if let Some(t) = trace.as_deref_mut() {
                t.push(NodeSet {
                    query_block: qb,
                    iteration,
                    ranges: ranges.clone(),
                    scores: kept.iter().map(|(_, s)| *s).collect(),
                });
            }
        }

        debug_assert!(ranges.iter().all(|r| r.width() == 1));
        let mut row: Vec<usize> = ranges.iter().map(|r| r.first).collect();
        row.sort_unstable();
        row.dedup();
        rows.push(row);
    }

    Ok(BlockMask::from_parts(b_q, b_k, t_q, t_k, q_offset, causal, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gen_random, Dist};

    fn scored_keys(scores: &[f32]) -> (Tensor2D, Tensor2D) {
        let q = Tensor2D::from_values(1, 2, vec![1.0, 0.0]).unwrap();
        let mut kv = Vec::new();
        for &s in scores {
            kv.extend_from_slice(&[s, 0.0]);
        }
        (q, Tensor2D::from_values(scores.len(), 2, kv).unwrap())
    }

    fn cfg(k: usize, b_q: usize, b_k: usize) -> HipConfig {
        HipConfig { k, b_q, b_k, sink_size: 0, window_size: 0, ..Default::default() }
    }

    #[test]
    fn split_examples() {
        let (a, b) = split_node(BlockRange::new(0, 3));
        assert_eq!((a, b.unwrap()), (BlockRange::new(0, 1), BlockRange::new(2, 3)));
        let (a, b) = split_node(BlockRange::new(0, 2));
        assert_eq!((a, b.unwrap()), (BlockRange::new(0, 0), BlockRange::new(1, 2)));
        let (a, b) = split_node(BlockRange::new(5, 5));
        assert_eq!(a, BlockRange::new(5, 5));
        assert!(b.is_none());
    }

    #[test]
    fn greedy_hit_selects_true_top2() {
        let (q, k) = scored_keys(&[0.1, 0.9, 0.5, 0.2]);
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg(2, 1, 1), false, &mut c).unwrap();
        assert_eq!(m.block_row(0), &[1, 2]);
    }

    #[test]
    fn greedy_miss_prunes_hidden_best() {
        // The representative of (0:1) beats the representative of (2:3), so
        // the branch holding the global best key 3 is pruned.
        let (q, k) = scored_keys(&[0.9, 0.1, 0.2, 0.95]);
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg(1, 1, 1), false, &mut c).unwrap();
        assert_eq!(m.block_row(0), &[0]);
    }

    #[test]
    fn block_granularity_trace() {
        // 4 key blocks of 2 rows; block max scores 1.0, 0.2, 0.3, 0.4.
        let block_scores = [1.0f32, 0.2, 0.3, 0.4];
        let mut kv = Vec::new();
        for &s in &block_scores {
            kv.extend_from_slice(&[s, 0.0]); // block max carrier
            kv.extend_from_slice(&[s - 0.1, 0.0]);
        }
        let k = Tensor2D::from_values(8, 2, kv).unwrap();
        let q = Tensor2D::from_values(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg(4, 2, 2), false, &mut c).unwrap();
        assert_eq!(m.block_row(0), &[0, 3]);
    }

    #[test]
    fn budget_covers_everything_when_k_at_least_t() {
        let q = gen_random(16, 4, 1, &Dist::Gaussian).unwrap();
        let k = gen_random(16, 4, 2, &Dist::Gaussian).unwrap();
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg(16, 4, 2), true, &mut c).unwrap();
        for qb in 0..m.n_query_blocks() {
            let last_pos = ((qb + 1) * 4 - 1).min(15);
            let bound = last_pos / 2 + 1;
            let all: Vec<usize> = (0..bound).collect();
            assert_eq!(m.block_row(qb), all.as_slice());
        }
        assert_eq!(c.score_evaluations, 0);
    }

    #[test]
    fn token_expansion_stays_within_budget() {
        let q = gen_random(64, 8, 3, &Dist::Gaussian).unwrap();
        let k = gen_random(64, 8, 4, &Dist::Gaussian).unwrap();
        let cfg = cfg(8, 4, 3);
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg, true, &mut c).unwrap();
        let tokens = m.expand_to_token_mask();
        for (i, row) in tokens.rows().iter().enumerate() {
            assert!(row.len() <= cfg.k + cfg.b_k - 1, "row {i} has {} tokens", row.len());
            assert!(row.iter().all(|&t| t <= i));
        }
    }

    #[test]
    fn top_r_select_examples() {
        let q = Tensor2D::from_values(1, 3, vec![3.0, -5.0, 1.0]).unwrap();
        assert_eq!(top_r_select(&q, 0..1, 2), vec![0, 1]);
        assert_eq!(top_r_select(&q, 0..1, 3), vec![0, 1, 2]);
        let q = Tensor2D::from_values(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(top_r_select(&q, 0..2, 1), vec![1]);
    }

    #[test]
    fn score_branch_is_tile_max() {
        // 1x1 blocks reduce to a plain dot product.
        let (q, k) = scored_keys(&[0.3, 0.7]);
        let s = score_branch(&q, 0..1, &k, 1, 1, None);
        assert_eq!(s, 0.7f32 as f64);

        // 2x2 tile: max over four products.
        let q2 = Tensor2D::from_values(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let k2 = Tensor2D::from_values(2, 2, vec![0.3, 0.0, -0.1, 0.0]).unwrap();
        let s = score_branch(&q2, 0..2, &k2, 0, 2, None);
        assert_eq!(s, 0.3f32 as f64); // {0.3, -0.1, -0.3, 0.1}
    }

    #[test]
    fn top_r_full_width_matches_plain_path() {
        let q = gen_random(32, 8, 5, &Dist::Gaussian).unwrap();
        let k = gen_random(32, 8, 6, &Dist::Gaussian).unwrap();
        let mut c1 = OpCounters::new();
        let mut c2 = OpCounters::new();
        let base = cfg(8, 4, 2);
        let full_r = HipConfig { top_r: Some(8), ..base.clone() };
        let a = estimate_block_mask(&q, &k, &base, true, &mut c1).unwrap();
        let b = estimate_block_mask(&q, &k, &full_r, true, &mut c2).unwrap();
        assert_eq!(a, b);
        assert_eq!(c1.component_reads, c2.component_reads);
    }

    #[test]
    fn full_depth_selects_identical_mask() {
        let q = gen_random(64, 8, 7, &Dist::Gaussian).unwrap();
        let k = gen_random(64, 8, 8, &Dist::Gaussian).unwrap();
        let base = cfg(8, 4, 2);
        let deep = HipConfig { full_depth: true, ..base.clone() };
        let mut c1 = OpCounters::new();
        let mut c2 = OpCounters::new();
        let a = estimate_block_mask(&q, &k, &base, true, &mut c1).unwrap();
        let b = estimate_block_mask(&q, &k, &deep, true, &mut c2).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert!(c2.score_evaluations >= c1.score_evaluations);
    }

    #[test]
    fn full_depth_cost_is_two_tiles_per_node_per_iteration() {
        let t = 64usize;
        let (b_q, b_k, k_budget) = (4usize, 2usize, 8usize);
        let q = gen_random(t, 8, 9, &Dist::Gaussian).unwrap();
        let k = gen_random(t, 8, 10, &Dist::Gaussian).unwrap();
        let c = HipConfig { full_depth: true, ..cfg(k_budget, b_q, b_k) };
        let mut counters = OpCounters::new();
        estimate_block_mask(&q, &k, &c, false, &mut counters).unwrap();
        let n_nodes = c.n_nodes();
        let n_it = ceil_log2(t / b_k) as u64;
        let expected = (t / b_q) as u64 * 2 * n_nodes as u64 * n_it * (b_q * b_k) as u64;
        assert_eq!(counters.score_evaluations, expected);
    }

    #[test]
    fn empty_keys_rejected() {
        let q = gen_random(2, 2, 0, &Dist::Gaussian).unwrap();
        let k = Tensor2D::from_values(0, 2, vec![]).unwrap();
        let mut c = OpCounters::new();
        assert!(estimate_block_mask(&q, &k, &cfg(2, 1, 1), false, &mut c).is_err());
    }

    #[test]
    fn oversized_blocks_clamp() {
        let q = gen_random(3, 2, 1, &Dist::Gaussian).unwrap();
        let k = gen_random(3, 2, 2, &Dist::Gaussian).unwrap();
        let mut c = OpCounters::new();
        let m = estimate_block_mask(&q, &k, &cfg(100, 100, 100), false, &mut c).unwrap();
        assert_eq!(m.b_q(), 3);
        assert_eq!(m.b_k(), 3);
        assert_eq!(m.block_row(0), &[0]);
    }

    #[test]
    fn mask_text_format() {
        let m = BlockMask::from_parts(2, 2, 4, 8, 4, true, vec![vec![0, 2], vec![1]]);
        assert_eq!(m.to_text(), "0: 0,2\n1: 1\n");
    }
}
