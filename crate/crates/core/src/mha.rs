//! Multi-head tensorisation of attention weights, per-layer compression and a
//! reference attention forward pass.
//!
//! Orientation follows the attention equations: `Wq`, `Wk`, `Wv` are
//! `d_model × (h·d_v)` and `Wo` is `(h·d_v) × d_model`. Head `i` owns columns
//! `i·d_v .. (i+1)·d_v` of the first three and rows `i·d_v .. (i+1)·d_v` of `Wo`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, stack, DenseTensor};
use crate::tucker::{reconstruct_shared, shared_factor_tucker, RankSpec, SharedTucker, SolveInfo, SolverOptions};

/// Index of each projection along the third mode of the tensorised weights.
pub const SLOT_Q: usize = 0;
pub const SLOT_K: usize = 1;
pub const SLOT_V: usize = 2;
pub const SLOT_O: usize = 3;

/// The four projection matrices of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaLayerWeights {
    pub wq: DenseTensor,
    pub wk: DenseTensor,
    pub wv: DenseTensor,
    pub wo: DenseTensor,
    pub d_model: usize,
    pub heads: usize,
    pub d_v: usize,
}

impl MhaLayerWeights {
    /// Validates shapes and derives `d_model` and `d_v = d_model / h`.
    pub fn new(
        wq: DenseTensor,
        wk: DenseTensor,
        wv: DenseTensor,
        wo: DenseTensor,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::InvalidWeights("head count must be >= 1".into()));
        }
        if wq.order() != 2 {
            return Err(Error::InvalidWeights(format!(
                "Wq must be a matrix, got shape {:?}",
                wq.shape()
            )));
        }
        let d_model = wq.rows();
        if !d_model.is_multiple_of(heads) {
            return Err(Error::InvalidWeights(format!(
                "{heads} heads do not divide d_model = {d_model}"
            )));
        }
        let d_v = d_model / heads;
        let w = Self {
            wq,
            wk,
            wv,
            wo,
            d_model,
            heads,
            d_v,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads * self.d_v != self.d_model {
            return Err(Error::InvalidWeights(format!(
                "h·d_v = {}·{} must equal d_model = {}",
                self.heads, self.d_v, self.d_model
            )));
        }
        let inner = self.heads * self.d_v;
        for (name, m) in [("Wq", &self.wq), ("Wk", &self.wk), ("Wv", &self.wv)] {
            if m.shape() != [self.d_model, inner] {
                return Err(Error::InvalidWeights(format!(
                    "{name} has shape {:?}, expected [{}, {inner}]",
                    m.shape(),
                    self.d_model
                )));
            }
        }
        if self.wo.shape() != [inner, self.d_model] {
            return Err(Error::InvalidWeights(format!(
                "Wo has shape {:?}, expected [{inner}, {}]",
                self.wo.shape(),
                self.d_model
            )));
        }
        Ok(())
    }

    /// `4·d_model·h·d_v`
    pub fn parameter_count(&self) -> usize {
        4 * self.d_model * self.heads * self.d_v
    }
}

/// Rearranges a layer into `W_all ∈ R^{d_model × d_v × 4 × h}` with
/// `W_all[:, :, ·, i] = [Wq_i, Wk_i, Wv_i, Wo_iᵀ]`. No arithmetic is performed.
pub fn tensorise(w: &MhaLayerWeights) -> Result<DenseTensor> {
    w.validate()?;
    let wo_t = w.wo.transpose()?;
    let mut heads = Vec::with_capacity(w.heads);
    for i in 0..w.heads {
        let start = i * w.d_v;
        let per_head = [
            w.wq.column_block(start, w.d_v)?,
            w.wk.column_block(start, w.d_v)?,
            w.wv.column_block(start, w.d_v)?,
            wo_t.column_block(start, w.d_v)?,
        ];
        heads.push(stack(&per_head)?);
    }
    stack(&heads)
}

/// Exact inverse of [`tensorise`].
pub fn detensorise(w_all: &DenseTensor) -> Result<MhaLayerWeights> {
    if w_all.order() != 4 {
        return Err(Error::Shape(format!(
            "expected an order-4 tensor, got shape {:?}",
            w_all.shape()
        )));
    }
    let &[d_model, d_v, slots, heads] = w_all.shape() else {
        unreachable!()
    };
    if slots != 4 {
        return Err(Error::Shape(format!(
            "third extent must be 4 (Q, K, V, Oᵀ), got {slots}"
        )));
    }
    let mut blocks: [Vec<DenseTensor>; 4] = Default::default();
    for i in 0..heads {
        let w_i = w_all.slice_last(i)?;
        for (slot, dst) in blocks.iter_mut().enumerate() {
            dst.push(w_i.slice_last(slot)?);
        }
    }
    let [q, k, v, o_t] = blocks;
    let wo = DenseTensor::hcat(&o_t)?.transpose()?;
    MhaLayerWeights::new(
        DenseTensor::hcat(&q)?,
        DenseTensor::hcat(&k)?,
        DenseTensor::hcat(&v)?,
        wo,
        heads,
    )
    .and_then(|w| {
        if w.d_v == d_v {
            Ok(w)
        } else {
            Err(Error::Shape(format!(
                "d_v = {d_v} with {heads} heads is inconsistent with d_model = {d_model}"
            )))
        }
    })
}

/// Exact parameter-count ratio `N_original / N_compressed`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompressionRatio {
    pub original: u64,
    pub compressed: u64,
}

impl CompressionRatio {
    pub fn value(&self) -> f64 {
        self.original as f64 / self.compressed as f64
    }
}

impl PartialEq for CompressionRatio {
    fn eq(&self, other: &Self) -> bool {
        self.original as u128 * other.compressed as u128
            == other.original as u128 * self.compressed as u128
    }
}

impl Eq for CompressionRatio {}

/// `4·d_model·h·d_v / (h·R1·R2·R3 + d_model·R1 + d_v·R2 + 4·R3)`.
pub fn compression_ratio(d_model: usize, heads: usize, d_v: usize, ranks: RankSpec) -> Result<CompressionRatio> {
    if d_model == 0 || heads == 0 || d_v == 0 {
        return Err(Error::InvalidWeights("dimensions must be positive".into()));
    }
    ranks.validate([d_model, d_v, 4])?;
    let (d, h, v) = (d_model as u64, heads as u64, d_v as u64);
    let (r1, r2, r3) = (ranks.r1 as u64, ranks.r2 as u64, ranks.r3 as u64);
    Ok(CompressionRatio {
        original: 4 * d * h * v,
        compressed: h * r1 * r2 * r3 + d * r1 + v * r2 + 4 * r3,
    })
}

/// One layer in shared-factor Tucker form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub shared: SharedTucker,
    pub ranks: RankSpec,
    /// `(d_model, h, d_v)`
    pub original_dims: (usize, usize, usize),
    pub fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub n_original: u64,
    pub n_compressed: u64,
    pub cr: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Tensorise, fit the shared-factor model and package the result.
pub fn compress_layer(
    w: &MhaLayerWeights,
    ranks: RankSpec,
    opts: &SolverOptions,
) -> Result<(CompressedLayer, CompressionReport)> {
    let ratio = compression_ratio(w.d_model, w.heads, w.d_v, ranks)?;
    let w_all = tensorise(w)?;
    let (shared, info): (SharedTucker, SolveInfo) = shared_factor_tucker(&w_all, ranks, opts)?;
    let norm = frobenius_norm(&w_all);
    let resid = frobenius_norm(&w_all.sub(&reconstruct_shared(&shared))?);
    let relative_error = if norm == 0.0 { 0.0 } else { resid / norm };
    debug_assert_eq!(shared.parameter_count() as u64, ratio.compressed);
    let report = CompressionReport {
        n_original: ratio.original,
        n_compressed: ratio.compressed,
        cr: ratio.value(),
        relative_error,
        iterations: info.iterations,
        converged: info.converged,
    };
    let layer = CompressedLayer {
        shared,
        ranks,
        original_dims: (w.d_model, w.heads, w.d_v),
        fit: (1.0 - relative_error).clamp(0.0, 1.0),
    };
    Ok((layer, report))
}

/// Denoised weights: `detensorise(reconstruct_shared(shared))`.
pub fn reconstruct_layer(c: &CompressedLayer) -> Result<MhaLayerWeights> {
    let w = detensorise(&reconstruct_shared(&c.shared))?;
    let (d_model, heads, d_v) = c.original_dims;
    if (w.d_model, w.heads, w.d_v) != (d_model, heads, d_v) {
        return Err(Error::Shape(format!(
            "reconstructed dims ({}, {}, {}) differ from recorded ({d_model}, {heads}, {d_v})",
            w.d_model, w.heads, w.d_v
        )));
    }
    Ok(w)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(m: &DenseTensor) -> Result<DenseTensor> {
    if m.order() != 2 {
        return Err(Error::Shape("softmax_rows expects a matrix".into()));
    }
    let cols = m.cols();
    let mut out = m.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

fn check_inputs(w: &MhaLayerWeights, q: &DenseTensor, k: &DenseTensor, v: &DenseTensor) -> Result<()> {
    w.validate()?;
    for (name, x) in [("Q", q), ("K", k), ("V", v)] {
        if x.order() != 2 || x.cols() != w.d_model {
            return Err(Error::Shape(format!(
                "{name} has shape {:?}, expected [L, {}]",
                x.shape(),
                w.d_model
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("attention input"));
        }
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "K has {} positions but V has {}",
            k.rows(),
            v.rows()
        )));
    }
    Ok(())
}

/// Per-head attention probabilities `softmax((Q·Wq_i)(K·Wk_i)ᵀ / √d_v)`.
pub fn attention_probabilities(
    w: &MhaLayerWeights,
    q: &DenseTensor,
    k: &DenseTensor,
) -> Result<Vec<DenseTensor>> {
    check_inputs(w, q, k, k)?;
    let qp = q.matmul(&w.wq)?;
    let kp = k.matmul(&w.wk)?;
    let scale = 1.0 / (w.d_v as f64).sqrt();
    (0..w.heads)
        .map(|i| {
            let qi = qp.column_block(i * w.d_v, w.d_v)?;
            let ki = kp.column_block(i * w.d_v, w.d_v)?;
            softmax_rows(&qi.matmul(&ki.transpose()?)?.scaled(scale))
        })
        .collect()
}

/// Multi-head attention: heads concatenated, then projected by `Wo`. Output is `L × d_model`.
pub fn attention_forward(
    w: &MhaLayerWeights,
    q: &DenseTensor,
    k: &DenseTensor,
    v: &DenseTensor,
) -> Result<DenseTensor> {
    check_inputs(w, q, k, v)?;
    let probs = attention_probabilities(w, q, k)?;
    let vp = v.matmul(&w.wv)?;
    let heads = probs
        .iter()
        .enumerate()
        .map(|(i, p)| p.matmul(&vp.column_block(i * w.d_v, w.d_v)?))
        .collect::<Result<Vec<_>>>()?;
    DenseTensor::hcat(&heads)?.matmul(&w.wo)
}
