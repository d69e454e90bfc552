//! Compression and structured denoising of multi-head attention weights.
//!
//! The four projection matrices of an attention layer are rearranged into a
//! `d_model × d_v × 4 × h` tensor ([`mha::tensorise`]) and approximated by a
//! Tucker model whose three factor matrices are shared by every head while
//! each head keeps its own core ([`tucker::shared_factor_tucker`]).
//! Truncated SVD of single matrices ([`linalg::rank_reduce`]) and HOOI on the
//! naively stacked matrices ([`tucker::trawl_stack_tucker`]) are provided as
//! baselines. [`container`] reads and writes checkpoints in the JSON-header
//! tensor container layout.

pub mod container;
pub mod error;
pub mod linalg;
pub mod mha;
pub mod tensor;
pub mod tucker;

pub use error::{Error, Result};
pub use mha::{
    attention_forward, compress_layer, compression_ratio, detensorise, reconstruct_layer, tensorise,
    CompressedLayer, CompressionRatio, CompressionReport, MhaLayerWeights,
};
pub use tensor::{fold, frobenius_norm, mode_n_product, stack, unfold, unstack, DenseTensor, ModeUnfolding};
pub use tucker::{
    hooi, hosvd, reconstruct_shared, shared_factor_tucker, shared_objective, shared_objective_per_head,
    trawl_stack_tucker, RankSpec, SharedTucker, SolveInfo, SolverOptions, TuckerFactors,
};
