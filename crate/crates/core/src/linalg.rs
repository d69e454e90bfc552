//! Economy SVD and truncated (Eckart–Young) rank reduction.
//!
//! Matrices whose aspect ratio exceeds 4:1 are first reduced to a square
//! problem on the smaller dimension with a Householder QR of the long side;
//! the square core then goes through a Golub–Kahan SVD. Unfoldings produced
//! by HOOI are routinely far wider than they are tall, so this keeps the
//! cost proportional to `long · short²`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Aspect ratio above which the long side is compressed by QR first.
const ASPECT_SWITCH: usize = 4;
/// Iteration cap of the bidiagonal SVD sweeps.
const MAX_SWEEPS: usize = 1000;

/// Economy SVD `A = U · diag(σ) · Vᵀ` with `r = min(m, n)` columns.
///
/// Singular values are non-increasing. Each singular pair is signed so that the
/// entry of largest magnitude in its `U` column is positive (ties: lowest row).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DenseTensor,
    pub singular_values: Vec<f64>,
    pub v: DenseTensor,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U[:, :r] · diag(σ[:r]) · V[:, :r]ᵀ`.
    pub fn reconstruct(&self, r: usize) -> DenseTensor {
        let m = self.u.rows();
        let n = self.v.rows();
        let full = self.rank();
        let mut out = vec![0.0; m * n];
        for k in 0..r.min(full) {
            let s = self.singular_values[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = s * self.u.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += a * self.v.at(j, k);
                }
            }
        }
        DenseTensor::matrix(m, n, out).expect("consistent shape")
    }
}

fn to_na(a: &DenseTensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

fn from_na(m: &DMatrix<f64>) -> DenseTensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    DenseTensor::matrix(r, c, data).expect("consistent shape")
}

/// Square-ish SVD: returns (U, σ, V) in nalgebra form, unsorted.
fn core_svd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = a
        .try_svd(true, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::NoConvergence(MAX_SWEEPS))?;
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    Ok((u, svd.singular_values.iter().copied().collect(), v))
}

pub fn svd(a: &DenseTensor) -> Result<SvdResult> {
    if a.order() != 2 {
        return Err(Error::Shape(format!(
            "svd expects a matrix, got shape {:?}",
            a.shape()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let (m, n) = (a.rows(), a.cols());
    let (u, s, v) = if m > ASPECT_SWITCH * n {
        // A = Q R, R = Ur Σ Vᵀ  =>  U = Q Ur
        let qr = to_na(a).qr();
        let (q, r) = (qr.q(), qr.r());
        let (ur, s, v) = core_svd(r)?;
        (q * ur, s, v)
    } else if n > ASPECT_SWITCH * m {
        // Aᵀ = Q R, Rᵀ = U Σ Wᵀ  =>  V = Q W
        let qr = to_na(a).transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let (u, s, w) = core_svd(r.transpose())?;
        (u, s, q * w)
    } else {
        core_svd(to_na(a))?
    };

    let r = s.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));

    let mut u_sorted = DMatrix::zeros(m, r);
    let mut v_sorted = DMatrix::zeros(n, r);
    let mut s_sorted = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let ucol = u.column(src);
        let mut lead = 0;
        for i in 1..m {
            if ucol[i].abs() > ucol[lead].abs() {
                lead = i;
            }
        }
        let sign = if ucol[lead] < 0.0 { -1.0 } else { 1.0 };
        u_sorted.set_column(dst, &(ucol * sign));
        v_sorted.set_column(dst, &(v.column(src) * sign));
        s_sorted.push(s[src].max(0.0));
    }

    Ok(SvdResult {
        u: from_na(&u_sorted),
        singular_values: s_sorted,
        v: from_na(&v_sorted),
    })
}

fn check_rank(a: &DenseTensor, rank: usize) -> Result<()> {
    let bound = a.rows().min(a.cols());
    if rank == 0 || rank > bound {
        return Err(Error::RankOutOfRange {
            mode: 0,
            rank,
            bound,
        });
    }
    Ok(())
}

/// Best rank-`rank` approximation of `a` in Frobenius norm (truncated SVD).
pub fn rank_reduce(a: &DenseTensor, rank: usize) -> Result<DenseTensor> {
    if a.order() != 2 {
        return Err(Error::Shape("rank_reduce expects a matrix".into()));
    }
    check_rank(a, rank)?;
    Ok(svd(a)?.reconstruct(rank))
}

/// The leading `rank` left singular vectors of `a` as an `m × rank` matrix.
pub fn leading_left_singular_vectors(a: &DenseTensor, rank: usize) -> Result<DenseTensor> {
    if a.order() != 2 {
        return Err(Error::Shape("expected a matrix".into()));
    }
    let m = a.rows();
    if rank == 0 || rank > m {
        return Err(Error::RankOutOfRange {
            mode: 0,
            rank,
            bound: m,
        });
    }
    let res = svd(a)?;
    if rank <= res.rank() {
        return res.u.column_block(0, rank);
    }
    // More vectors than the numerical rank of a short-wide U asks for:
    // complete the basis with an orthonormal complement.
    complete_basis(&res.u, rank)
}

/// Extends the orthonormal columns of `q` to `target` orthonormal columns,
/// deterministically, by Gram–Schmidt against the canonical basis.
fn complete_basis(q: &DenseTensor, target: usize) -> Result<DenseTensor> {
    let m = q.rows();
    let mut cols: Vec<Vec<f64>> = (0..q.cols())
        .map(|j| (0..m).map(|i| q.at(i, j)).collect())
        .collect();
    for e in 0..m {
        if cols.len() == target {
            break;
        }
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= d * ci;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut data = vec![0.0; m * target];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            data[i * target + j] = c[i];
        }
    }
    DenseTensor::matrix(m, target, data)
}

/// `‖QᵀQ − I‖_F` for a matrix with (intended) orthonormal columns.
pub fn orthonormality_defect(q: &DenseTensor) -> f64 {
    let gram = q.transpose().expect("matrix").matmul(q).expect("square");
    let n = gram.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram.at(i, j) - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::frobenius_norm;

    fn diag(values: &[f64]) -> DenseTensor {
        let n = values.len();
        DenseTensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { values[ix[0]] } else { 0.0 })
    }

    fn pseudo_random(m: usize, n: usize, seed: u64) -> DenseTensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DenseTensor::from_fn(&[m, n], |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_and_diagonal_spectra() {
        let s = svd(&DenseTensor::identity(3)).unwrap();
        assert_eq!(s.singular_values.len(), 3);
        for v in &s.singular_values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let s = svd(&diag(&[3.0, 2.0, 1.0])).unwrap();
        for (got, want) in s.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        let s = svd(&diag(&[1.0, 3.0, 2.0])).unwrap();
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality_across_aspects() {
        for (m, n) in [(4, 3), (3, 4), (40, 5), (5, 40), (7, 7), (1, 9), (9, 1)] {
            let a = pseudo_random(m, n, (m * 31 + n) as u64);
            let s = svd(&a).unwrap();
            assert_eq!(s.rank(), m.min(n));
            let err = frobenius_norm(&a.sub(&s.reconstruct(s.rank())).unwrap());
            assert!(err <= 1e-10 * frobenius_norm(&a).max(1.0), "{m}x{n}: {err}");
            assert!(orthonormality_defect(&s.u) <= 1e-10);
            assert!(orthonormality_defect(&s.v) <= 1e-10);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let a = pseudo_random(6, 5, 9);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a).unwrap();
        assert_eq!(s1, s2);
        for j in 0..s1.u.cols() {
            let mut lead = 0;
            for i in 1..s1.u.rows() {
                if s1.u.at(i, j).abs() > s1.u.at(lead, j).abs() {
                    lead = i;
                }
            }
            assert!(s1.u.at(lead, j) > 0.0);
        }
        // flipping the input flips V, never the U sign convention
        let neg = svd(&a.scaled(-1.0)).unwrap();
        for j in 0..s1.u.cols() {
            for i in 0..s1.u.rows() {
                assert!((neg.u.at(i, j) - s1.u.at(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = DenseTensor::identity(2);
        a.data_mut()[1] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_reduce_cases() {
        let a = pseudo_random(5, 4, 3);
        let full = rank_reduce(&a, 4).unwrap();
        assert!(frobenius_norm(&a.sub(&full).unwrap()) <= 1e-10 * frobenius_norm(&a));

        let u = DenseTensor::matrix(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let v = DenseTensor::matrix(1, 4, vec![0.3, 1.0, -1.0, 2.0]).unwrap();
        let r1 = u.matmul(&v).unwrap();
        let rec = rank_reduce(&r1, 1).unwrap();
        assert!(frobenius_norm(&r1.sub(&rec).unwrap()) <= 1e-10 * frobenius_norm(&r1));

        let d = diag(&[3.0, 2.0, 1.0]);
        let err = frobenius_norm(&d.sub(&rank_reduce(&d, 2).unwrap()).unwrap());
        assert!((err - 1.0).abs() <= 1e-9);

        assert!(matches!(rank_reduce(&d, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(rank_reduce(&d, 4), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn degenerate_spectrum_projector_is_stable() {
        // σ = (2, 2, 1): only the span of the leading pair is well-defined
        let d = diag(&[2.0, 1.0, 2.0]);
        let s = svd(&d).unwrap();
        let u2 = s.u.column_block(0, 2).unwrap();
        let proj = u2.matmul(&u2.transpose().unwrap()).unwrap();
        let expected = diag(&[1.0, 0.0, 1.0]);
        assert!(frobenius_norm(&proj.sub(&expected).unwrap()) < 1e-12);
    }

    #[test]
    fn leading_vectors_complete_short_bases() {
        // 6x2 matrix of rank 2: asking for 4 leading vectors pads with a complement
        let a = pseudo_random(6, 2, 5);
        let q = leading_left_singular_vectors(&a, 4).unwrap();
        assert_eq!(q.shape(), &[6, 4]);
        assert!(orthonormality_defect(&q) < 1e-12);
        assert!(leading_left_singular_vectors(&a, 7).is_err());
    }
}
