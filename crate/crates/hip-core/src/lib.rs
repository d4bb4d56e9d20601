//! Block-sparse attention with hierarchically estimated masks.
//!
//! The crate provides, at desk scale and with exact instrumentation:
//!
//! - [`tensor`]: dense `f32` matrices, seeded generators, and a bit-exact
//!   binary file format;
//! - [`oracle`]: quadratic reference attention, exact top-k token masks, and
//!   mask-quality metrics;
//! - [`mask`]: the log-linear tree-search estimator that picks key blocks
//!   per query block;
//! - [`sparse`]: streaming block-sparse attention with sink and
//!   sliding-window augmentation;
//! - [`decode`]: a KV-cached autoregressive loop with dense leading layers
//!   and periodic mask refresh;
//! - [`ensemble`]: randomized mask sampling with vote-based combination;
//! - [`counters`]: operation tallies for verifying cost growth empirically.

pub mod counters;
pub mod decode;
pub mod ensemble;
pub mod error;
pub mod mask;
pub mod oracle;
pub mod sparse;
pub mod tensor;

pub use counters::OpCounters;
pub use decode::{decode_run, new_synthetic_model, DecodeTrace, SyntheticModel};
pub use ensemble::{estimate_ensemble_mask, sample_random_mask, vote_masks, EnsembleConfig};
pub use error::{Error, Result};
pub use mask::{estimate_block_mask, estimate_block_mask_traced, BlockMask, BlockRange, HipConfig, NodeSet};
pub use oracle::{dense_attention, exact_topk_mask, mask_metrics, masked_attention, TokenMask};
pub use sparse::{sparse_attention, union_effective_mask, EffectiveMask};
pub use tensor::{gen_random, read_tensor, write_tensor, Dist, Tensor2D};
