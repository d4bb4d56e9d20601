//! Autoregressive decoding over a synthetic attention stack with KV caching,
//! dense leading layers, per-layer mask caching, and periodic refresh.
//!
//! The stack is attention-only: each layer projects its input with fixed
//! random matrices, appends the new key/value rows to the layer cache,
//! attends, and adds a residual. There is no vocabulary; the next "token
//! embedding" is the squashed final hidden row of the previous step, which
//! keeps magnitudes bounded across steps and stands in for sampling.

use serde::Serialize;

use crate::counters::OpCounters;
use crate::ensemble::estimate_ensemble_mask;
use crate::error::{Error, Result};
use crate::mask::{estimate_block_mask, splitmix64, BlockMask, HipConfig};
use crate::oracle::dense_attention;
use crate::sparse::{effective_row, sparse_attention, EffectiveMask};
use crate::tensor::{gen_random, Dist, Tensor2D};

/// Fixed random projection stack, deterministic in `(layers, width, seed)`.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    d: usize,
    layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub w_q: Tensor2D,
    pub w_k: Tensor2D,
    pub w_v: Tensor2D,
}

impl SyntheticModel {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn layer(&self, l: usize) -> &LayerWeights {
        &self.layers[l]
    }
}

/// Builds `layers` projection triples of shape d x d, entries N(0, 1/d).
pub fn new_synthetic_model(layers: usize, d: usize, seed: u64) -> Result<SyntheticModel> {
    if layers == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic model needs layers >= 1 and d >= 1, got {layers}, {d}"
        )));
    }
    let scale = 1.0 / (d as f32).sqrt();
    let mut layer_weights = Vec::with_capacity(layers);
    let base = splitmix64(seed);
    for l in 0..layers {
        let ls = splitmix64(base ^ l as u64);
        let gen = |comp: u64| -> Result<Tensor2D> {
            Ok(gen_random(d, d, splitmix64(ls ^ comp), &Dist::Gaussian)?.scale(scale))
        };
        layer_weights.push(LayerWeights { w_q: gen(1)?, w_k: gen(2)?, w_v: gen(3)? });
    }
    Ok(SyntheticModel { d, layers: layer_weights })
}

/// Growing per-layer key/value rows.
#[derive(Debug, Clone, Default)]
struct KvCache {
    keys: Vec<f32>,
    vals: Vec<f32>,
    len: usize,
}

impl KvCache {
    fn append_rows(&mut self, k: &Tensor2D, v: &Tensor2D) {
        self.keys.extend_from_slice(k.values());
        self.vals.extend_from_slice(v.values());
        self.len += k.rows();
    }

    fn key_tensor(&self, d: usize) -> Tensor2D {
        Tensor2D::from_values(self.len, d, self.keys.clone()).expect("cache rows finite")
    }

    fn value_tensor(&self, d: usize) -> Tensor2D {
        Tensor2D::from_values(self.len, d, self.vals.clone()).expect("cache rows finite")
    }
}

#[derive(Debug, Clone)]
struct CachedMask {
    mask: BlockMask,
    age: usize,
}

/// Per-layer caches plus mask-reuse bookkeeping.
#[derive(Debug, Clone)]
pub struct DecodeState {
    caches: Vec<KvCache>,
    masks: Vec<Option<CachedMask>>,
    prompt_len: usize,
    generated: usize,
}

impl DecodeState {
    pub fn cache_len(&self, layer: usize) -> usize {
        self.caches[layer].len
    }

    pub fn generated(&self) -> usize {
        self.generated
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    /// Steps since the cached mask of `layer` was estimated.
    pub fn mask_age(&self, layer: usize) -> Option<usize> {
        self.masks[layer].as_ref().map(|c| c.age)
    }
}

/// One (step, layer) event; step 0 is the prompt pass.
#[derive(Debug, Clone, Serialize)]
pub struct StepLayerRecord {
    pub step: usize,
    pub layer: usize,
    pub dense: bool,
    pub refreshed: bool,
    pub score_evaluations: u64,
    pub key_block_reads: u64,
    pub mask_estimations: u64,
}

/// Outputs and instrumentation of a full prompt + decode run.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    /// Final-layer hidden states after the prompt pass.
    pub prompt_output: Tensor2D,
    /// Final-layer hidden row per decode step.
    pub step_outputs: Vec<Vec<f32>>,
    pub records: Vec<StepLayerRecord>,
    pub counters: OpCounters,
    pub final_state: DecodeState,
}

impl DecodeTrace {
    /// One JSON object per line, one line per (step, layer) record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Decode-time mask estimations in one layer (excludes the prompt pass).
    pub fn decode_estimations(&self, layer: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.layer == layer && r.step > 0 && r.refreshed)
            .count()
    }
}

fn add_rows(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    let vals: Vec<f32> = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    Tensor2D::from_values(a.rows(), a.cols(), vals).expect("finite sums")
}

fn squash(row: &[f32]) -> Vec<f32> {
    row.iter().map(|&x| x.tanh()).collect()
}

enum LayerKind {
    Dense,
    HipEnsemble,
    Hip,
}

fn layer_kind(cfg: &HipConfig, layer: usize) -> LayerKind {
    if layer < cfg.l_d {
        LayerKind::Dense
    } else if cfg.ensemble.as_ref().is_some_and(|e| layer < e.l_e) {
        LayerKind::HipEnsemble
    } else {
        LayerKind::Hip
    }
}

/// Runs the prompt pass and `n_steps` decode steps.
///
/// Layers below `l_d` use exact dense attention. The other layers estimate a
/// block mask over the full prompt once, then re-estimate for the single new
/// query at step 1 and whenever the generated length is divisible by `r_m`,
/// reusing the cached mask in between. Sink and window tokens are unioned in
/// at every step because the window tracks the query position.
pub fn decode_run(
    model: &SyntheticModel,
    prompt: &Tensor2D,
    n_steps: usize,
    cfg: &HipConfig,
) -> Result<DecodeTrace> {
    if prompt.rows() == 0 {
        return Err(Error::InvalidConfig("prompt must have at least one row".into()));
    }
    if prompt.cols() != model.d {
        return Err(Error::ShapeMismatch(format!(
            "prompt width {} != model width {}",
            prompt.cols(),
            model.d
        )));
    }
    if cfg.l_d > model.layer_count() {
        return Err(Error::InvalidConfig(format!(
            "l_d={} exceeds layer count {}",
            cfg.l_d,
            model.layer_count()
        )));
    }
    cfg.validate(model.d)?;

    let d = model.d;
    let mut counters = OpCounters::new();
    let mut records = Vec::new();
    let mut state = DecodeState {
        caches: vec![KvCache::default(); model.layer_count()],
        masks: vec![None; model.layer_count()],
        prompt_len: prompt.rows(),
        generated: 0,
    };

    // Prompt pass: full-sequence attention per layer.
    let mut hidden = prompt.clone();
    for (l, w) in model.layers.iter().enumerate() {
        let before = counters;
        let q = hidden.matmul(&w.w_q)?;
        let k_new = hidden.matmul(&w.w_k)?;
        let v_new = hidden.matmul(&w.w_v)?;
        state.caches[l].append_rows(&k_new, &v_new);
        let keys = state.caches[l].key_tensor(d);
        let vals = state.caches[l].value_tensor(d);

        let (attn, dense, refreshed) = match layer_kind(cfg, l) {
            LayerKind::Dense => (dense_attention(&q, &keys, &vals, true)?, true, false),
            kind => {
                let mask = match kind {
                    LayerKind::HipEnsemble => {
                        estimate_ensemble_mask(&q, &keys, cfg, true, &mut counters)?
                    }
                    _ => estimate_block_mask(&q, &keys, cfg, true, &mut counters)?,
                };
                let eff = crate::sparse::union_effective_mask(&mask, cfg.sink_size, cfg.window_size);
                (sparse_attention(&q, &keys, &vals, &eff, &mut counters)?, false, true)
            }
        };
        hidden = add_rows(&attn, &hidden);

        let delta = counters.delta_since(&before);
        records.push(StepLayerRecord {
            step: 0,
            layer: l,
            dense,
            refreshed,
            score_evaluations: delta.score_evaluations,
            key_block_reads: delta.key_block_reads,
            mask_estimations: delta.mask_estimations,
        });
    }
    let prompt_output = hidden.clone();

    // Decode steps.
    let mut next_input = squash(prompt_output.row(prompt_output.rows() - 1));
    let mut step_outputs = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        state.generated = step;
        let mut x = Tensor2D::from_values(1, d, next_input.clone())?;
        for (l, w) in model.layers.iter().enumerate() {
            let before = counters;
            let q = x.matmul(&w.w_q)?;
            let k_new = x.matmul(&w.w_k)?;
            let v_new = x.matmul(&w.w_v)?;
            state.caches[l].append_rows(&k_new, &v_new);
            let keys = state.caches[l].key_tensor(d);
            let vals = state.caches[l].value_tensor(d);
            let pos = state.caches[l].len - 1;

            let (attn, dense, refreshed) = match layer_kind(cfg, l) {
                LayerKind::Dense => (dense_attention(&q, &keys, &vals, true)?, true, false),
                kind => {
                    let refresh = step == 1 || step % cfg.r_m == 0;
                    if refresh {
                        let mask = match kind {
                            LayerKind::HipEnsemble => {
                                estimate_ensemble_mask(&q, &keys, cfg, true, &mut counters)?
                            }
                            _ => estimate_block_mask(&q, &keys, cfg, true, &mut counters)?,
                        };
                        state.masks[l] = Some(CachedMask { mask, age: 0 });
                    } else {
                        let cached = state.masks[l].as_mut().expect("mask cached at step 1");
                        cached.age += 1;
                        debug_assert!(cached.age < cfg.r_m);
                    }
                    let cached = state.masks[l].as_ref().unwrap();
                    // The tree-search result is reused; the position-relative
                    // window and the sink are rebuilt against the grown cache.
                    let row = effective_row(
                        cached.mask.block_row(0),
                        cached.mask.b_k(),
                        pos,
                        keys.rows(),
                        cfg.sink_size,
                        cfg.window_size,
                        true,
                    );
                    let eff = EffectiveMask::from_rows(vec![row], keys.rows(), 1, cached.mask.b_k());
                    (sparse_attention(&q, &keys, &vals, &eff, &mut counters)?, false, refresh)
                }
            };
            x = add_rows(&attn, &x);

            let delta = counters.delta_since(&before);
            records.push(StepLayerRecord {
                step,
                layer: l,
                dense,
                refreshed,
                score_evaluations: delta.score_evaluations,
                key_block_reads: delta.key_block_reads,
                mask_estimations: delta.mask_estimations,
            });
        }
        step_outputs.push(x.row(0).to_vec());
        next_input = squash(x.row(0));

        debug_assert!(state.caches.iter().all(|c| c.len == state.prompt_len + step));
    }

    Ok(DecodeTrace {
        prompt_output,
        step_outputs,
        records,
        counters,
        final_state: state,
    })
}
