//! Self-describing container for compressed layers.
//!
//! Each layer `i` contributes four F64 tensors `layers.{i}.u1`, `.u2`, `.u3`,
//! `.cores` and a metadata entry `layer.{i}` holding a JSON [`LayerRecord`].

use serde::{Deserialize, Serialize};

use super::{Dtype, TensorContainer};
use crate::error::{Error, Result};
use crate::mha::{CompressedLayer, CompressionReport};
use crate::tucker::{RankSpec, SharedTucker, SolveInfo, SolverOptions};

pub const ARTIFACT_FORMAT: &str = "mha-shared-tucker/1";
const FORMAT_KEY: &str = "format";

/// Everything needed to interpret (and audit) one compressed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_v: usize,
    pub ranks: [usize; 3],
    pub max_iters: usize,
    pub fit_tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fit: f64,
    pub relative_error: f64,
    pub n_original: u64,
    pub n_compressed: u64,
}

impl LayerRecord {
    pub fn new(layer: usize, c: &CompressedLayer, report: &CompressionReport, opts: &SolverOptions) -> Self {
        let (d_model, heads, d_v) = c.original_dims;
        Self {
            layer,
            d_model,
            heads,
            d_v,
            ranks: c.ranks.as_array(),
            max_iters: opts.max_iters,
            fit_tolerance: opts.fit_tolerance,
            iterations: report.iterations,
            converged: report.converged,
            fit: c.fit,
            relative_error: report.relative_error,
            n_original: report.n_original,
            n_compressed: report.n_compressed,
        }
    }

    pub fn solve_info(&self) -> SolveInfo {
        SolveInfo {
            iterations: self.iterations,
            converged: self.converged,
            fit: self.fit,
            fit_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactLayer {
    pub record: LayerRecord,
    pub compressed: CompressedLayer,
}

fn tensor_name(layer: usize, part: &str) -> String {
    format!("layers.{layer}.{part}")
}

/// Packs layers (in the given order) into an artifact container.
pub fn write_artifact(layers: &[ArtifactLayer]) -> TensorContainer {
    let mut c = TensorContainer::new();
    c.set_metadata(FORMAT_KEY, ARTIFACT_FORMAT);
    for l in layers {
        let i = l.record.layer;
        let s = &l.compressed.shared;
        c.insert_tensor(tensor_name(i, "u1"), &s.u1, Dtype::F64);
        c.insert_tensor(tensor_name(i, "u2"), &s.u2, Dtype::F64);
        c.insert_tensor(tensor_name(i, "u3"), &s.u3, Dtype::F64);
        c.insert_tensor(tensor_name(i, "cores"), &s.cores, Dtype::F64);
        c.set_metadata(
            format!("layer.{i}"),
            serde_json::to_string(&l.record).expect("plain record"),
        );
    }
    c
}

/// Unpacks every layer of an artifact, sorted by layer index.
pub fn read_artifact(c: &TensorContainer) -> Result<Vec<ArtifactLayer>> {
    match c.metadata().get(FORMAT_KEY) {
        Some(f) if f == ARTIFACT_FORMAT => {}
        Some(f) => {
            return Err(Error::Format(format!(
                "artifact format {f:?}, expected {ARTIFACT_FORMAT:?}"
            )))
        }
        None => return Err(Error::Format("not a compressed-layer artifact".into())),
    }
    let mut out = Vec::new();
    for (key, value) in c.metadata() {
        if !key.starts_with("layer.") {
            continue;
        }
        let record: LayerRecord = serde_json::from_str(value)
            .map_err(|e| Error::Format(format!("metadata `{key}`: {e}")))?;
        let i = record.layer;
        if key != &format!("layer.{i}") {
            return Err(Error::Format(format!("metadata `{key}` records layer {i}")));
        }
        let shared = SharedTucker::new(
            c.tensor(&tensor_name(i, "u1"))?,
            c.tensor(&tensor_name(i, "u2"))?,
            c.tensor(&tensor_name(i, "u3"))?,
            c.tensor(&tensor_name(i, "cores"))?,
        )?;
        let ranks = RankSpec::new(record.ranks[0], record.ranks[1], record.ranks[2]);
        if shared.ranks() != ranks
            || shared.dims() != (record.d_model, record.d_v, record.heads)
            || shared.u3.rows() != 4
        {
            return Err(Error::Format(format!(
                "layer {i}: tensors disagree with recorded dims/ranks"
            )));
        }
        out.push(ArtifactLayer {
            compressed: CompressedLayer {
                shared,
                ranks,
                original_dims: (record.d_model, record.heads, record.d_v),
                fit: record.fit,
            },
            record,
        });
    }
    out.sort_by_key(|l| l.record.layer);
    Ok(out)
}
