//! Mapping between container tensor names and per-layer attention weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{TensorContainer, TensorEntry};
use crate::error::{Error, Result};
use crate::mha::MhaLayerWeights;
use crate::tensor::DenseTensor;
use crate::tucker::RankSpec;

const PLACEHOLDER: &str = "{layer}";

/// Whether each stored matrix must be transposed to reach the in-memory orientation
/// (`d_model × h·d_v` for q/k/v, `h·d_v × d_model` for o).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransposeFlags {
    #[serde(default)]
    pub q: bool,
    #[serde(default)]
    pub k: bool,
    #[serde(default)]
    pub v: bool,
    #[serde(default)]
    pub o: bool,
}

/// JSON-configurable naming scheme, e.g.
/// `{"q":"blk.{layer}.attn_q","k":…,"v":…,"o":…,"transpose_on_load":{"q":true,…},"n_heads":4,"n_layers":2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerNamingConfig {
    pub q: String,
    pub k: String,
    pub v: String,
    pub o: String,
    #[serde(default)]
    pub transpose_on_load: TransposeFlags,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Optional per-layer ranks, keyed by decimal layer index.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rank_overrides: BTreeMap<String, [usize; 3]>,
}

/// The four container names of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerTensorNames {
    pub q: String,
    pub k: String,
    pub v: String,
    pub o: String,
}

impl LayerTensorNames {
    fn with_flags(&self, flags: &TransposeFlags) -> [(&'static str, &str, bool); 4] {
        [
            ("q", &self.q, flags.q),
            ("k", &self.k, flags.k),
            ("v", &self.v, flags.v),
            ("o", &self.o, flags.o),
        ]
    }
}

impl LayerNamingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, t) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("o", &self.o)] {
            if !t.contains(PLACEHOLDER) {
                return Err(Error::Format(format!(
                    "naming template `{key}` = {t:?} lacks the {PLACEHOLDER} placeholder"
                )));
            }
        }
        if self.n_heads == 0 {
            return Err(Error::Format("n_heads must be >= 1".into()));
        }
        for key in self.rank_overrides.keys() {
            key.parse::<usize>().map_err(|_| {
                Error::Format(format!("rank override key {key:?} is not a layer index"))
            })?;
        }
        Ok(())
    }

    pub fn names(&self, layer: usize) -> LayerTensorNames {
        let sub = |t: &str| t.replace(PLACEHOLDER, &layer.to_string());
        LayerTensorNames {
            q: sub(&self.q),
            k: sub(&self.k),
            v: sub(&self.v),
            o: sub(&self.o),
        }
    }

    /// Override ranks for `layer`, if the config carries any.
    pub fn ranks_for(&self, layer: usize) -> Option<RankSpec> {
        self.rank_overrides
            .iter()
            .find(|(k, _)| k.parse::<usize>().ok() == Some(layer))
            .map(|(_, r)| RankSpec::new(r[0], r[1], r[2]))
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.n_layers {
            return Err(Error::InvalidWeights(format!(
                "layer {layer} out of range (n_layers = {})",
                self.n_layers
            )));
        }
        Ok(())
    }
}

/// Reads the four projection matrices of `layer` in the in-memory orientation.
pub fn load_layer(c: &TensorContainer, cfg: &LayerNamingConfig, layer: usize) -> Result<MhaLayerWeights> {
    cfg.check_layer(layer)?;
    let names = cfg.names(layer);
    let mut mats = Vec::with_capacity(4);
    for (_, name, transpose) in names.with_flags(&cfg.transpose_on_load) {
        let t = c.tensor(name)?;
        if t.order() != 2 {
            return Err(Error::InvalidWeights(format!(
                "`{name}` has shape {:?}, expected a matrix",
                t.shape()
            )));
        }
        mats.push(if transpose { t.transpose()? } else { t });
    }
    let [wq, wk, wv, wo]: [DenseTensor; 4] = mats.try_into().expect("four matrices");
    MhaLayerWeights::new(wq, wk, wv, wo, cfg.n_heads)
        .map_err(|e| Error::InvalidWeights(format!("layer {layer}: {e}")))
}

/// Returns a copy of `c` with the four tensors of `layer` replaced by `w`, written
/// back in each entry's original dtype and orientation. Every other entry is untouched.
pub fn store_layer(
    c: &TensorContainer,
    cfg: &LayerNamingConfig,
    layer: usize,
    w: &MhaLayerWeights,
) -> Result<TensorContainer> {
    cfg.check_layer(layer)?;
    w.validate()?;
    if w.heads != cfg.n_heads {
        return Err(Error::InvalidWeights(format!(
            "weights have {} heads, naming config says {}",
            w.heads, cfg.n_heads
        )));
    }
    let names = cfg.names(layer);
    let mut out = c.clone();
    let mats = [&w.wq, &w.wk, &w.wv, &w.wo];
    for ((_, name, transpose), m) in names.with_flags(&cfg.transpose_on_load).into_iter().zip(mats) {
        let existing = c
            .entry(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let stored = if transpose { m.transpose()? } else { m.clone() };
        if existing.shape != stored.shape() {
            return Err(Error::Shape(format!(
                "`{name}` is stored as {:?} but the replacement is {:?}",
                existing.shape,
                stored.shape()
            )));
        }
        out.insert(name, TensorEntry::from_tensor(&stored, existing.dtype));
    }
    Ok(out)
}
