//! Randomized mask sampling and voting.
//!
//! Several estimator runs with perturbed node splits produce slightly
//! different masks; per-block agreement counting then keeps indices that
//! reach a vote threshold. With the threshold at 1 and no truncation this
//! widens the mask (union); at the sample count it narrows it
//! (intersection). Per-row selection sizes become data-dependent, which the
//! single deterministic estimate cannot provide.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::mask::{div_ceil, estimate_impl, BlockMask, HipConfig, SplitRule};
use crate::tensor::Tensor2D;

/// Voting-ensemble parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Number of randomized mask samples.
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    /// Magnitude of the random split offset.
    #[serde(default = "default_r_e")]
    pub r_e: f64,
    /// Minimum votes for a block index to survive.
    #[serde(default = "default_theta")]
    pub theta_vote: usize,
    /// 1 truncates the voted mask back to the budget, 0 keeps every survivor.
    #[serde(default)]
    pub tau: u8,
    /// Leading layers that use the ensemble estimate during decoding.
    #[serde(default)]
    pub l_e: usize,
    /// Base seed for the per-sample perturbation streams.
    #[serde(default)]
    pub seed: u64,
}

fn default_n_e() -> usize {
    4
}
fn default_r_e() -> f64 {
    5.0
}
fn default_theta() -> usize {
    1
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_e: default_n_e(),
            r_e: default_r_e(),
            theta_vote: default_theta(),
            tau: 0,
            l_e: 0,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_e == 0 {
            return Err(Error::InvalidConfig("n_e must be >= 1".into()));
        }
        if self.theta_vote == 0 || self.theta_vote > self.n_e {
            return Err(Error::InvalidConfig(format!(
                "theta_vote={} outside [1, n_e={}]",
                self.theta_vote, self.n_e
            )));
        }
        if !(self.r_e >= 0.0 && self.r_e.is_finite()) {
            return Err(Error::InvalidConfig(format!("r_e={} must be >= 0", self.r_e)));
        }
        if self.tau > 1 {
            return Err(Error::InvalidConfig(format!("tau={} must be 0 or 1", self.tau)));
        }
        Ok(())
    }

    pub fn truncates(&self) -> bool {
        self.tau == 1
    }
}

/// One randomized estimate: node splits move by a uniform integer offset in
/// `[-round(r_e), +round(r_e)]`, clamped so both halves stay non-empty. The
/// offset stream is a pure function of `(sample_seed, query block,
/// iteration, node index)`; `r_e = 0` reproduces the deterministic estimate
/// bit for bit.
pub fn sample_random_mask(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    sample_seed: u64,
    counters: &mut OpCounters,
) -> Result<BlockMask> {
    let magnitude = cfg.ensemble.as_ref().map_or(0.0, |e| e.r_e).round() as i64;
    estimate_impl(
        q,
        k,
        cfg,
        true,
        counters,
        SplitRule::Perturbed { magnitude, seed: sample_seed },
        None,
    )
}

/// Causality-respecting variant selector used by pipelines that run
/// non-causal benchmarks.
pub fn sample_random_mask_with(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    causal: bool,
    sample_seed: u64,
    counters: &mut OpCounters,
) -> Result<BlockMask> {
    let magnitude = cfg.ensemble.as_ref().map_or(0.0, |e| e.r_e).round() as i64;
    estimate_impl(
        q,
        k,
        cfg,
        causal,
        counters,
        SplitRule::Perturbed { magnitude, seed: sample_seed },
        None,
    )
}

/// Combines samples by per-block vote counting.
///
/// A block index survives for a query block when at least `theta_vote`
/// samples selected it. With `truncate`, survivors are cut back to
/// `ceil(k / b_k)` per query block, ordered by votes (descending) then block
/// index (ascending).
pub fn vote_masks(
    samples: &[BlockMask],
    theta_vote: usize,
    truncate: bool,
    k: usize,
) -> Result<BlockMask> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidConfig("vote over zero samples".into()))?;
    for s in &samples[1..] {
        let consistent = s.b_q() == first.b_q()
            && s.b_k() == first.b_k()
            && s.t_q() == first.t_q()
            && s.t_k() == first.t_k()
            && s.q_offset() == first.q_offset()
            && s.causal() == first.causal();
        if !consistent {
            return Err(Error::ShapeMismatch("vote over inconsistent mask shapes".into()));
        }
    }
    if theta_vote == 0 || theta_vote > samples.len() {
        return Err(Error::InvalidConfig(format!(
            "theta_vote={} outside [1, {}]",
            theta_vote,
            samples.len()
        )));
    }

    let n_nodes = div_ceil(k, first.b_k());
    let mut rows = Vec::with_capacity(first.n_query_blocks());
    for qb in 0..first.n_query_blocks() {
        let mut votes: HashMap<usize, usize> = HashMap::new();
        for s in samples {
            for &b in s.block_row(qb) {
                *votes.entry(b).or_insert(0) += 1;
            }
        }
        let mut surviving: Vec<(usize, usize)> = votes
            .into_iter()
            .filter(|&(_, v)| v >= theta_vote)
            .collect();
        if truncate {
            surviving.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            surviving.truncate(n_nodes);
        }
        let mut row: Vec<usize> = surviving.into_iter().map(|(b, _)| b).collect();
        row.sort_unstable();
        rows.push(row);
    }
    Ok(BlockMask::from_parts(
        first.b_q(),
        first.b_k(),
        first.t_q(),
        first.t_k(),
        first.q_offset(),
        first.causal(),
        rows,
    ))
}

/// Full ensemble estimate: sample `n_e` randomized masks and vote.
pub fn estimate_ensemble_mask(
    q: &Tensor2D,
    k: &Tensor2D,
    cfg: &HipConfig,
    causal: bool,
    counters: &mut OpCounters,
) -> Result<BlockMask> {
    let e = cfg
        .ensemble
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("ensemble settings missing".into()))?;
    e.validate()?;
    let samples: Result<Vec<BlockMask>> = (0..e.n_e)
        .map(|i| sample_random_mask_with(q, k, cfg, causal, e.seed.wrapping_add(i as u64), counters))
        .collect();
    vote_masks(&samples?, e.theta_vote, e.truncates(), cfg.k)
}

/// Selected key blocks after voting divided by before (the per-sample
/// budget), summed over query blocks.
pub fn relative_retention_ratio(voted: &BlockMask, baseline: &BlockMask) -> f64 {
    let after: usize = voted.rows().iter().map(Vec::len).sum();
    let before: usize = baseline.rows().iter().map(Vec::len).sum();
    after as f64 / before as f64
}
