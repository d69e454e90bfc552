//! Tucker decompositions: HOSVD, HOOI, the shared-factor variant used for
//! multi-head attention weights, and the naive three-way stacking baseline.
//!
//! The shared-factor decomposition treats the all-heads tensor
//! `W_all ∈ R^{d_model × d_v × 4 × h}` as a 4-way Tucker model whose head-mode
//! factor is pinned to the identity. The identity product is never formed: the
//! head mode is simply left untouched by every projection, so slice `i` of the
//! 4-way core is the core of head `i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::leading_left_singular_vectors;
use crate::tensor::{frobenius_norm, mode_n_product, stack, unfold, DenseTensor};

/// Multilinear ranks for the `(d_model, d_v, 4)` modes of the tensorised weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankSpec {
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
}

impl RankSpec {
    pub fn new(r1: usize, r2: usize, r3: usize) -> Self {
        Self { r1, r2, r3 }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.r1, self.r2, self.r3]
    }

    /// Checks `1 <= R_n <= extent_n` for the three shared modes.
    pub fn validate(&self, extents: [usize; 3]) -> Result<()> {
        check_ranks(&self.as_array(), &extents)
    }

    /// `true` if every rank is at least the corresponding rank of `other`.
    pub fn dominates(&self, other: &RankSpec) -> bool {
        self.r1 >= other.r1 && self.r2 >= other.r2 && self.r3 >= other.r3
    }
}

impl std::fmt::Display for RankSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.r1, self.r2, self.r3)
    }
}

fn check_ranks(ranks: &[usize], extents: &[usize]) -> Result<()> {
    if ranks.len() != extents.len() {
        return Err(Error::Shape(format!(
            "{} ranks given for a tensor of order {}",
            ranks.len(),
            extents.len()
        )));
    }
    for (mode, (&rank, &bound)) in ranks.iter().zip(extents).enumerate() {
        if rank == 0 || rank > bound {
            return Err(Error::RankOutOfRange { mode, rank, bound });
        }
    }
    Ok(())
}

/// Stopping rule for the alternating solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the relative change of the fit between sweeps drops below this.
    pub fit_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            fit_tolerance: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be >= 1".into()));
        }
        if self.fit_tolerance <= 0.0 || !self.fit_tolerance.is_finite() {
            return Err(Error::InvalidOptions(format!(
                "fit_tolerance must be a positive finite number, got {}",
                self.fit_tolerance
            )));
        }
        Ok(())
    }
}

/// Convergence record of an alternating solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    /// Number of full sweeps performed (0 means the HOSVD initialiser was returned).
    pub iterations: usize,
    pub converged: bool,
    /// Fit `1 − ‖T − T̂‖_F / ‖T‖_F` of the returned iterate.
    pub fit: f64,
    /// Fit after initialisation followed by the fit after every sweep.
    pub fit_history: Vec<f64>,
}

/// A Tucker model `core ×_0 U_0 ×_1 U_1 … ×_{N-1} U_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: DenseTensor,
    /// Factor `n` is `I_n × R_n` with orthonormal columns.
    pub factors: Vec<DenseTensor>,
}

impl TuckerFactors {
    pub fn reconstruct(&self) -> DenseTensor {
        let mut out = self.core.clone();
        for (mode, u) in self.factors.iter().enumerate() {
            out = mode_n_product(&out, u, mode).expect("factor shapes match core");
        }
        out
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    pub fn parameter_count(&self) -> usize {
        self.core.len() + self.factors.iter().map(DenseTensor::len).sum::<usize>()
    }
}

/// Shared factor matrices plus the stacked per-head cores.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedTucker {
    /// `d_model × R1`
    pub u1: DenseTensor,
    /// `d_v × R2`
    pub u2: DenseTensor,
    /// `4 × R3`
    pub u3: DenseTensor,
    /// `R1 × R2 × R3 × h`; slice `i` of the trailing mode is the core of head `i`.
    pub cores: DenseTensor,
}

impl SharedTucker {
    /// Assembles a model, checking that factor and core shapes agree.
    pub fn new(u1: DenseTensor, u2: DenseTensor, u3: DenseTensor, cores: DenseTensor) -> Result<Self> {
        for (name, u) in [("U1", &u1), ("U2", &u2), ("U3", &u3)] {
            if u.order() != 2 {
                return Err(Error::Shape(format!("{name} must be a matrix")));
            }
        }
        if cores.order() != 4 {
            return Err(Error::Shape(format!(
                "core tensor must be order 4, got shape {:?}",
                cores.shape()
            )));
        }
        let cs = cores.shape();
        if cs[0] != u1.cols() || cs[1] != u2.cols() || cs[2] != u3.cols() {
            return Err(Error::Shape(format!(
                "core shape {cs:?} disagrees with factor ranks ({}, {}, {})",
                u1.cols(),
                u2.cols(),
                u3.cols()
            )));
        }
        Ok(Self { u1, u2, u3, cores })
    }

    pub fn ranks(&self) -> RankSpec {
        RankSpec::new(self.u1.cols(), self.u2.cols(), self.u3.cols())
    }

    /// `(d_model, d_v, h)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u1.rows(), self.u2.rows(), self.heads())
    }

    pub fn heads(&self) -> usize {
        self.cores.shape()[3]
    }

    /// Shape of the tensor this model reconstructs.
    pub fn full_shape(&self) -> [usize; 4] {
        [self.u1.rows(), self.u2.rows(), self.u3.rows(), self.heads()]
    }

    pub fn factors(&self) -> [&DenseTensor; 3] {
        [&self.u1, &self.u2, &self.u3]
    }

    /// `h·R1·R2·R3 + d_model·R1 + d_v·R2 + 4·R3`
    pub fn parameter_count(&self) -> usize {
        self.cores.len() + self.u1.len() + self.u2.len() + self.u3.len()
    }

    /// Core of head `i` as an `R1 × R2 × R3` tensor.
    pub fn head_core(&self, head: usize) -> Result<DenseTensor> {
        self.cores.slice_last(head)
    }

    pub fn reconstruct(&self) -> DenseTensor {
        reconstruct_shared(self)
    }
}

/// `T ×_m U_mᵀ` over every mode that has a factor, optionally skipping one mode.
fn project(t: &DenseTensor, factors_t: &[Option<DenseTensor>], skip: Option<usize>) -> DenseTensor {
    let mut out = t.clone();
    for (mode, ut) in factors_t.iter().enumerate() {
        if Some(mode) == skip {
            continue;
        }
        if let Some(ut) = ut {
            out = mode_n_product(&out, ut, mode).expect("factor matches extent");
        }
    }
    out
}

fn expand(core: &DenseTensor, factors: &[Option<DenseTensor>]) -> DenseTensor {
    let mut out = core.clone();
    for (mode, u) in factors.iter().enumerate() {
        if let Some(u) = u {
            out = mode_n_product(&out, u, mode).expect("factor matches core");
        }
    }
    out
}

fn fit_of(t: &DenseTensor, t_norm: f64, core: &DenseTensor, factors: &[Option<DenseTensor>]) -> f64 {
    let approx = expand(core, factors);
    let resid = frobenius_norm(&t.sub(&approx).expect("same shape"));
    if t_norm == 0.0 {
        if resid == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - resid / t_norm
    }
}

fn transposes(factors: &[Option<DenseTensor>]) -> Vec<Option<DenseTensor>> {
    factors
        .iter()
        .map(|u| u.as_ref().map(|u| u.transpose().expect("matrix")))
        .collect()
}

struct Solution {
    factors: Vec<Option<DenseTensor>>,
    core: DenseTensor,
    info: SolveInfo,
}

/// HOSVD initialisation for the modes with `Some(rank)`; `None` modes stay identity.
fn hosvd_masked(t: &DenseTensor, ranks: &[Option<usize>]) -> Result<(Vec<Option<DenseTensor>>, DenseTensor)> {
    let mut factors = Vec::with_capacity(ranks.len());
    for (mode, r) in ranks.iter().enumerate() {
        factors.push(match r {
            Some(r) => Some(leading_left_singular_vectors(&unfold(t, mode)?.matrix, *r)?),
            None => None,
        });
    }
    let core = project(t, &transposes(&factors), None);
    Ok((factors, core))
}

/// HOOI over the modes with `Some(rank)`, ascending mode order every sweep.
fn hooi_masked(t: &DenseTensor, ranks: &[Option<usize>], opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    let t_norm = frobenius_norm(t);
    let (mut factors, mut core) = hosvd_masked(t, ranks)?;
    let mut fit = fit_of(t, t_norm, &core, &factors);
    let mut history = vec![fit];
    let mut best = (fit, factors.clone(), core.clone());
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        for mode in 0..ranks.len() {
            let Some(r) = ranks[mode] else { continue };
            let partial = project(t, &transposes(&factors), Some(mode));
            factors[mode] = Some(leading_left_singular_vectors(&unfold(&partial, mode)?.matrix, r)?);
        }
        core = project(t, &transposes(&factors), None);
        let next = fit_of(t, t_norm, &core, &factors);
        history.push(next);
        let change = (next - fit).abs() / fit.abs().max(f64::MIN_POSITIVE);
        fit = next;
        if fit > best.0 {
            best = (fit, factors.clone(), core.clone());
        }
        if change < opts.fit_tolerance {
            converged = true;
            break;
        }
    }

    let (fit, factors, core) = best;
    Ok(Solution {
        factors,
        core,
        info: SolveInfo {
            iterations,
            converged,
            fit,
            fit_history: history,
        },
    })
}

fn validate_input(t: &DenseTensor, what: &'static str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Truncated higher-order SVD: factor `n` holds the leading `ranks[n]` left singular
/// vectors of the mode-`n` unfolding and the core is `T ×_n U_nᵀ` over all modes.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    check_ranks(ranks, t.shape())?;
    validate_input(t, "hosvd input")?;
    let masked: Vec<Option<usize>> = ranks.iter().copied().map(Some).collect();
    let (factors, core) = hosvd_masked(t, &masked)?;
    Ok(TuckerFactors {
        core,
        factors: factors.into_iter().map(|u| u.expect("all modes")).collect(),
    })
}

/// Higher-order orthogonal iteration, initialised with HOSVD.
///
/// Running out of sweeps is not an error: the best iterate is returned and
/// [`SolveInfo::converged`] is false.
pub fn hooi(t: &DenseTensor, ranks: &[usize], opts: &SolverOptions) -> Result<(TuckerFactors, SolveInfo)> {
    check_ranks(ranks, t.shape())?;
    validate_input(t, "hooi input")?;
    let masked: Vec<Option<usize>> = ranks.iter().copied().map(Some).collect();
    let sol = hooi_masked(t, &masked, opts)?;
    Ok((
        TuckerFactors {
            core: sol.core,
            factors: sol.factors.into_iter().map(|u| u.expect("all modes")).collect(),
        },
        sol.info,
    ))
}

/// Shared-factor Tucker of an order-4 tensor `d_model × d_v × 4 × h`: factors for the
/// first three modes are shared across heads, the head mode keeps the identity.
///
/// Minimises `½‖W_all − G_all ×_0 U1 ×_1 U2 ×_2 U3‖²_F` by HOOI restricted to modes 0..3.
pub fn shared_factor_tucker(
    w_all: &DenseTensor,
    ranks: RankSpec,
    opts: &SolverOptions,
) -> Result<(SharedTucker, SolveInfo)> {
    if w_all.order() != 4 {
        return Err(Error::Shape(format!(
            "shared-factor Tucker expects an order-4 tensor, got shape {:?}",
            w_all.shape()
        )));
    }
    let s = w_all.shape();
    ranks.validate([s[0], s[1], s[2]])?;
    validate_input(w_all, "shared-factor Tucker input")?;
    let masked = [Some(ranks.r1), Some(ranks.r2), Some(ranks.r3), None];
    let sol = hooi_masked(w_all, &masked, opts)?;
    let mut it = sol.factors.into_iter();
    let (u1, u2, u3) = (
        it.next().flatten().expect("mode 0"),
        it.next().flatten().expect("mode 1"),
        it.next().flatten().expect("mode 2"),
    );
    Ok((SharedTucker::new(u1, u2, u3, sol.core)?, sol.info))
}

/// `G_all ×_0 U1 ×_1 U2 ×_2 U3` (the head mode is left as is).
pub fn reconstruct_shared(st: &SharedTucker) -> DenseTensor {
    let mut out = mode_n_product(&st.cores, &st.u1, 0).expect("validated shapes");
    out = mode_n_product(&out, &st.u2, 1).expect("validated shapes");
    mode_n_product(&out, &st.u3, 2).expect("validated shapes")
}

/// `½‖W_all − reconstruct_shared(st)‖²_F`, computed on the 4-way tensor.
pub fn shared_objective(w_all: &DenseTensor, st: &SharedTucker) -> Result<f64> {
    if w_all.shape() != st.full_shape() {
        return Err(Error::Shape(format!(
            "tensor shape {:?} vs model shape {:?}",
            w_all.shape(),
            st.full_shape()
        )));
    }
    let r = frobenius_norm(&w_all.sub(&reconstruct_shared(st))?);
    Ok(0.5 * r * r)
}

/// The same objective evaluated head by head: `½ Σ_i ‖W_i − G_i ×_0 U1 ×_1 U2 ×_2 U3‖²_F`.
pub fn shared_objective_per_head(w_all: &DenseTensor, st: &SharedTucker) -> Result<f64> {
    if w_all.shape() != st.full_shape() {
        return Err(Error::Shape(format!(
            "tensor shape {:?} vs model shape {:?}",
            w_all.shape(),
            st.full_shape()
        )));
    }
    let mut total = 0.0;
    for head in 0..st.heads() {
        let w_i = w_all.slice_last(head)?;
        let model = TuckerFactors {
            core: st.head_core(head)?,
            factors: vec![st.u1.clone(), st.u2.clone(), st.u3.clone()],
        };
        let r = frobenius_norm(&w_i.sub(&model.reconstruct())?);
        total += r * r;
    }
    Ok(0.5 * total)
}

/// Naive-stack baseline: stacks four `d_model × (h·d_v)` matrices into a
/// `d_model × (h·d_v) × 4` tensor and fits a standard Tucker model with HOOI.
///
/// `ranks` are `(R1', R2', R3')` for the `(d_model, h·d_v, 4)` modes. The
/// returned factors are, in order, `C` (d_model × R1'), `B` (h·d_v × R2') and
/// `A` (4 × R3').
pub fn trawl_stack_tucker(
    wq: &DenseTensor,
    wk: &DenseTensor,
    wv: &DenseTensor,
    wo_t: &DenseTensor,
    ranks: [usize; 3],
    opts: &SolverOptions,
) -> Result<(TuckerFactors, SolveInfo)> {
    for m in [wq, wk, wv, wo_t] {
        if m.order() != 2 || m.shape() != wq.shape() {
            return Err(Error::Shape(format!(
                "stacked matrices must share one 2-D shape, got {:?} and {:?}",
                wq.shape(),
                m.shape()
            )));
        }
    }
    let stacked = stack(&[wq.clone(), wk.clone(), wv.clone(), wo_t.clone()])?;
    hooi(&stacked, &ranks, opts)
}
