//! Attention restricted to an estimated mask plus sink and sliding-window
//! tokens, computed with an online softmax that streams over selected key
//! tiles and never materializes a full score matrix.

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::mask::BlockMask;
use crate::oracle::TokenMask;
use crate::tensor::{dot_f64, Tensor2D};

/// Per-query-row token selection after block expansion and sink/window
/// augmentation; sorted unique indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveMask {
    t_k: usize,
    b_q: usize,
    b_k: usize,
    rows: Vec<Vec<usize>>,
}

impl EffectiveMask {
    pub fn from_rows(rows: Vec<Vec<usize>>, t_k: usize, b_q: usize, b_k: usize) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        Self { t_k, b_q, b_k, rows }
    }

    pub fn t_k(&self) -> usize {
        self.t_k
    }

    pub fn b_q(&self) -> usize {
        self.b_q
    }

    pub fn b_k(&self) -> usize {
        self.b_k
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn to_token_mask(&self) -> TokenMask {
        TokenMask::new(self.rows.clone())
    }
}

/// Selected tokens for a single query row: expanded mask blocks, the sink
/// prefix, and the sliding window ending at `pos`, all clamped to the causal
/// bound (or to `t_k` when non-causal).
pub fn effective_row(
    mask_blocks: &[usize],
    b_k: usize,
    pos: usize,
    t_k: usize,
    sink_size: usize,
    window_size: usize,
    causal: bool,
) -> Vec<usize> {
    let bound = if causal { (pos + 1).min(t_k) } else { t_k };
    let mut toks: Vec<usize> = Vec::new();
    for &b in mask_blocks {
        let start = b * b_k;
        let end = ((b + 1) * b_k).min(bound);
        toks.extend(start..end.max(start));
    }
    toks.extend(0..sink_size.min(bound));
    let w_hi = (pos + 1).min(bound);
    let w_lo = (pos + 1).saturating_sub(window_size);
    toks.extend(w_lo..w_hi);
    toks.sort_unstable();
    toks.dedup();
    toks
}

/// Expands a block mask to rows and unions in sink and window tokens.
pub fn union_effective_mask(
    mask: &BlockMask,
    sink_size: usize,
    window_size: usize,
) -> EffectiveMask {
    let mut rows = Vec::with_capacity(mask.t_q());
    for i in 0..mask.t_q() {
        let qb = i / mask.b_q();
        rows.push(effective_row(
            mask.block_row(qb),
            mask.b_k(),
            mask.q_offset() + i,
            mask.t_k(),
            sink_size,
            window_size,
            mask.causal(),
        ));
    }
    EffectiveMask { t_k: mask.t_k(), b_q: mask.b_q(), b_k: mask.b_k(), rows }
}

/// Order in which a row's selected key tiles are streamed. The online
/// softmax result is order-independent up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileOrder {
    Ascending,
    Descending,
}

/// Streaming masked attention over the selected tokens of each row.
///
/// Numerically equivalent to [`crate::oracle::masked_attention`] on the same
/// selection; rows with an empty selection yield zeros and log a warning.
/// `counters.key_block_reads` grows by the number of distinct
/// (query block, key block) tiles touched.
pub fn sparse_attention(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    eff: &EffectiveMask,
    counters: &mut OpCounters,
) -> Result<Tensor2D> {
    sparse_attention_ordered(q, k, v, eff, counters, TileOrder::Ascending)
}

pub fn sparse_attention_ordered(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    eff: &EffectiveMask,
    counters: &mut OpCounters,
    order: TileOrder,
) -> Result<Tensor2D> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "key count {} != value count {}",
            k.rows(),
            v.rows()
        )));
    }
    if eff.rows.len() != q.rows() || eff.t_k != k.rows() {
        return Err(Error::ShapeMismatch(format!(
            "mask shape ({} rows, t_k {}) vs tensors ({} queries, {} keys)",
            eff.rows.len(),
            eff.t_k,
            q.rows(),
            k.rows()
        )));
    }

    let d = k.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let n_query_blocks = q.rows().div_ceil(eff.b_q);
    let mut blocks_touched: Vec<std::collections::HashSet<usize>> =
        vec![std::collections::HashSet::new(); n_query_blocks];

    let mut out = Tensor2D::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let sel = &eff.rows[i];
        if sel.is_empty() {
            log::warn!("sparse_attention: empty selection for row {i}, emitting zeros");
            continue;
        }
        if *sel.last().unwrap() >= k.rows() {
            return Err(Error::IndexOutOfRange(format!(
                "row {i} selects key {} of {}",
                sel.last().unwrap(),
                k.rows()
            )));
        }

        // Tile = maximal run of selected tokens inside one key block.
        let mut tiles: Vec<&[usize]> = Vec::new();
        let mut start = 0;
        for j in 1..=sel.len() {
            if j == sel.len() || sel[j] / eff.b_k != sel[start] / eff.b_k {
                tiles.push(&sel[start..j]);
                start = j;
            }
        }
        if order == TileOrder::Descending {
            tiles.reverse();
        }

        let qb = i / eff.b_q;
        for tile in &tiles {
            blocks_touched[qb].insert(tile[0] / eff.b_k);
        }

        // Online softmax with a running max and denominator.
        let qrow = q.row(i);
        let mut m = f64::NEG_INFINITY;
        let mut denom = 0.0f64;
        let mut acc = vec![0.0f64; v.cols()];
        for tile in tiles {
            for &j in tile {
                let s = dot_f64(qrow, k.row(j)) * scale;
                if s > m {
                    let shrink = if m.is_finite() { (m - s).exp() } else { 0.0 };
                    denom *= shrink;
                    for a in acc.iter_mut() {
                        *a *= shrink;
                    }
                    m = s;
                }
                let w = (s - m).exp();
                denom += w;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += w * v.get(j, c) as f64;
                }
            }
        }
        for (c, a) in acc.iter().enumerate() {
            out.set(i, c, (*a / denom) as f32);
        }
    }

    counters.key_block_reads += blocks_touched.iter().map(|s| s.len() as u64).sum::<u64>();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{estimate_block_mask, HipConfig};
    use crate::oracle::{dense_attention, masked_attention};
    use crate::tensor::{gen_random, Dist};

    fn max_abs_diff(a: &Tensor2D, b: &Tensor2D) -> f32 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn effective_row_examples() {
        // No sink or window: pure block expansion.
        assert_eq!(effective_row(&[1], 2, 7, 8, 0, 0, true), vec![2, 3]);
        // Empty mask, sink 1, window 1 at position 5.
        assert_eq!(effective_row(&[], 2, 5, 8, 1, 1, true), vec![0, 5]);
        // Window reaching back past zero covers the whole prefix.
        let row = effective_row(&[], 2, 40, 4096, 32, 128, true);
        let expect: Vec<usize> = (0..=40).collect();
        assert_eq!(row, expect);
    }

    #[test]
    fn window_includes_self_when_causal() {
        for pos in [0usize, 3, 17] {
            let row = effective_row(&[], 2, pos, 32, 0, 1, true);
            assert_eq!(row, vec![pos]);
        }
    }

    #[test]
    fn full_mask_matches_dense() {
        let t = 24;
        let q = gen_random(t, 8, 50, &Dist::Gaussian).unwrap();
        let k = gen_random(t, 8, 51, &Dist::Gaussian).unwrap();
        let v = gen_random(t, 8, 52, &Dist::Gaussian).unwrap();
        let rows: Vec<Vec<usize>> = (0..t).map(|i| (0..=i).collect()).collect();
        let eff = EffectiveMask::from_rows(rows, t, 4, 2);
        let mut c = OpCounters::new();
        let got = sparse_attention(&q, &k, &v, &eff, &mut c).unwrap();
        let want = dense_attention(&q, &k, &v, true).unwrap();
        assert!(max_abs_diff(&got, &want) <= 1e-5);
    }

    #[test]
    fn singleton_row_returns_value_row() {
        let q = gen_random(1, 4, 53, &Dist::Gaussian).unwrap();
        let k = gen_random(6, 4, 54, &Dist::Gaussian).unwrap();
        let v = gen_random(6, 4, 55, &Dist::Gaussian).unwrap();
        let eff = EffectiveMask::from_rows(vec![vec![4]], 6, 1, 2);
        let mut c = OpCounters::new();
        let got = sparse_attention(&q, &k, &v, &eff, &mut c).unwrap();
        assert_eq!(got.row(0), v.row(4));
    }

    #[test]
    fn pipeline_matches_oracle_on_same_mask() {
        let (t, d) = (64, 8);
        let q = gen_random(t, d, 60, &Dist::Gaussian).unwrap();
        let k = gen_random(t, d, 61, &Dist::Gaussian).unwrap();
        let v = gen_random(t, d, 62, &Dist::Gaussian).unwrap();
        let cfg = HipConfig {
            k: 16,
            b_q: 4,
            b_k: 2,
            sink_size: 4,
            window_size: 8,
            ..Default::default()
        };
        let mut c = OpCounters::new();
        let mask = estimate_block_mask(&q, &k, &cfg, true, &mut c).unwrap();
        let eff = union_effective_mask(&mask, cfg.sink_size, cfg.window_size);
        let got = sparse_attention(&q, &k, &v, &eff, &mut c).unwrap();
        let want = masked_attention(&q, &k, &v, &eff.to_token_mask()).unwrap();
        assert!(max_abs_diff(&got, &want) <= 1e-5);
    }

    #[test]
    fn tile_order_does_not_change_result() {
        let (t, d) = (48, 8);
        let q = gen_random(t, d, 70, &Dist::Gaussian).unwrap();
        let k = gen_random(t, d, 71, &Dist::Gaussian).unwrap();
        let v = gen_random(t, d, 72, &Dist::Gaussian).unwrap();
        let cfg = HipConfig { k: 8, b_q: 4, b_k: 2, sink_size: 2, window_size: 4, ..Default::default() };
        let mut c = OpCounters::new();
        let mask = estimate_block_mask(&q, &k, &cfg, true, &mut c).unwrap();
        let eff = union_effective_mask(&mask, cfg.sink_size, cfg.window_size);
        let a = sparse_attention_ordered(&q, &k, &v, &eff, &mut c, TileOrder::Ascending).unwrap();
        let b = sparse_attention_ordered(&q, &k, &v, &eff, &mut c, TileOrder::Descending).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-6);
    }

    #[test]
    fn empty_row_yields_zeros() {
        let q = gen_random(2, 4, 80, &Dist::Gaussian).unwrap();
        let k = gen_random(4, 4, 81, &Dist::Gaussian).unwrap();
        let v = gen_random(4, 4, 82, &Dist::Gaussian).unwrap();
        let eff = EffectiveMask::from_rows(vec![vec![], vec![1]], 4, 1, 2);
        let mut c = OpCounters::new();
        let got = sparse_attention(&q, &k, &v, &eff, &mut c).unwrap();
        assert!(got.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(got.row(1), v.row(1));
    }

    #[test]
    fn out_of_range_selection_rejected() {
        let q = gen_random(1, 4, 83, &Dist::Gaussian).unwrap();
        let k = gen_random(4, 4, 84, &Dist::Gaussian).unwrap();
        let v = gen_random(4, 4, 85, &Dist::Gaussian).unwrap();
        let eff = EffectiveMask::from_rows(vec![vec![4]], 4, 1, 2);
        let mut c = OpCounters::new();
        assert!(matches!(
            sparse_attention(&q, &k, &v, &eff, &mut c),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn key_block_reads_count_union_tiles_per_query_block() {
        let q = gen_random(4, 4, 86, &Dist::Gaussian).unwrap();
        let k = gen_random(8, 4, 87, &Dist::Gaussian).unwrap();
        let v = gen_random(8, 4, 88, &Dist::Gaussian).unwrap();
        // One query block of 4 rows; rows touch blocks {0}, {0,1}, {2}, {3}.
        let eff = EffectiveMask::from_rows(
            vec![vec![0], vec![1, 2], vec![4, 5], vec![6]],
            8,
            4,
            2,
        );
        let mut c = OpCounters::new();
        sparse_attention(&q, &k, &v, &eff, &mut c).unwrap();
        assert_eq!(c.key_block_reads, 4);
    }
}
