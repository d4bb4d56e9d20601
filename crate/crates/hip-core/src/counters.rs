//! Operation tallies used to verify the log-linear cost of mask estimation
//! and the work proportionality of sparse attention.

use serde::{Deserialize, Serialize};

/// Monotone counters accumulated across a run.
///
/// `score_evaluations` counts query-row x key-row dot products performed
/// during mask estimation; `component_reads` counts the vector components
/// those dot products actually touched (`d` per product, or `r` under the
/// reduced-component mode). `key_block_reads` counts (query block, key block)
/// tiles touched by sparse attention. `mask_estimations` counts estimator
/// invocations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub score_evaluations: u64,
    pub key_block_reads: u64,
    pub mask_estimations: u64,
    pub component_reads: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Merge counts from a worker; totals are order-independent.
    pub fn merge(&mut self, other: &OpCounters) {
        self.score_evaluations += other.score_evaluations;
        self.key_block_reads += other.key_block_reads;
        self.mask_estimations += other.mask_estimations;
        self.component_reads += other.component_reads;
    }

    /// Per-field difference since `earlier`.
    pub fn delta_since(&self, earlier: &OpCounters) -> OpCounters {
        OpCounters {
            score_evaluations: self.score_evaluations - earlier.score_evaluations,
            key_block_reads: self.key_block_reads - earlier.key_block_reads,
            mask_estimations: self.mask_estimations - earlier.mask_estimations,
            component_reads: self.component_reads - earlier.component_reads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_sums_fields() {
        let mut a = OpCounters { score_evaluations: 1, key_block_reads: 2, mask_estimations: 3, component_reads: 4 };
        let b = OpCounters { score_evaluations: 10, key_block_reads: 20, mask_estimations: 30, component_reads: 40 };
        a.merge(&b);
        assert_eq!(a.score_evaluations, 11);
        assert_eq!(a.key_block_reads, 22);
        assert_eq!(a.mask_estimations, 33);
        assert_eq!(a.component_reads, 44);
    }

    #[test]
    fn delta_subtracts() {
        let early = OpCounters { score_evaluations: 5, ..Default::default() };
        let late = OpCounters { score_evaluations: 9, mask_estimations: 1, ..Default::default() };
        let d = late.delta_since(&early);
        assert_eq!(d.score_evaluations, 4);
        assert_eq!(d.mask_estimations, 1);
    }
}
