//! Dense N-dimensional tensors and the multilinear primitives built on them.
//!
//! Storage is row-major (last index fastest) in `f64`. Modes are 0-based
//! throughout: mode `0` is the first extent.
//!
//! The mode-`n` unfolding of a tensor of shape `I_0 × … × I_{N-1}` is the
//! `I_n × (∏_{m≠n} I_m)` matrix whose rows are indexed by mode `n` and whose
//! columns enumerate the remaining modes in ascending order, row-major over
//! them. For a tensor viewed as `(P, I_n, Q)` with `P = ∏_{m<n} I_m` and
//! `Q = ∏_{m>n} I_m`, element `(p, i, q)` lands at row `i`, column `p·Q + q`.

use crate::error::{Error, Result};

/// A dense, row-major tensor of 64-bit reals.
///
/// Order-2 tensors double as matrices throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor order must be at least 1".into()));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!(
            "extent {pos} of shape {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows usize")))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {len} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor. Panics on an empty shape or a zero extent.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: every valid tensor holds at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    /// Flat offset of a multi-index, or `None` if it is out of bounds.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            off = off * e + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    // ---- matrix helpers (order 2) ----

    fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "{what} expects a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Number of rows; panics if the tensor is not a matrix.
    pub fn rows(&self) -> usize {
        assert_eq!(self.order(), 2, "rows() on a non-matrix");
        self.shape[0]
    }

    /// Number of columns; panics if the tensor is not a matrix.
    pub fn cols(&self) -> usize {
        assert_eq!(self.order(), 2, "cols() on a non-matrix");
        self.shape[1]
    }

    /// Matrix element `(i, j)`. Panics when out of bounds.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.order(), 2);
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        self.data[i * self.shape[1] + j]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = rhs.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul of {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &rhs.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Columns `start..start + width` of a matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Result<Self> {
        let (r, c) = self.expect_matrix("column_block")?;
        if width == 0 || start + width > c {
            return Err(Error::Shape(format!(
                "column block {start}..{} outside {c} columns",
                start + width
            )));
        }
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + width]);
        }
        Self::matrix(r, width, out)
    }

    /// Rows `start..start + height` of a matrix.
    pub fn row_block(&self, start: usize, height: usize) -> Result<Self> {
        let (r, c) = self.expect_matrix("row_block")?;
        if height == 0 || start + height > r {
            return Err(Error::Shape(format!(
                "row block {start}..{} outside {r} rows",
                start + height
            )));
        }
        Self::matrix(height, c, self.data[start * c..(start + height) * c].to_vec())
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(blocks: &[Self]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Shape("hcat of no matrices".into()))?;
        let (r, _) = first.expect_matrix("hcat")?;
        let mut total = 0;
        for b in blocks {
            let (br, bc) = b.expect_matrix("hcat")?;
            if br != r {
                return Err(Error::Shape(format!("hcat rows {br} vs {r}")));
            }
            total += bc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for b in blocks {
                let bc = b.shape[1];
                out.extend_from_slice(&b.data[i * bc..(i + 1) * bc]);
            }
        }
        Self::matrix(r, total, out)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn vcat(blocks: &[Self]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Shape("vcat of no matrices".into()))?;
        let (_, c) = first.expect_matrix("vcat")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for b in blocks {
            let (br, bc) = b.expect_matrix("vcat")?;
            if bc != c {
                return Err(Error::Shape(format!("vcat cols {bc} vs {c}")));
            }
            rows += br;
            out.extend_from_slice(&b.data);
        }
        Self::matrix(rows, c, out)
    }

    /// Element-wise `self - rhs`.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::Shape(format!(
                "subtraction of {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Element-wise `self + rhs`.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::Shape(format!(
                "addition of {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// The sub-tensor at index `k` of the trailing mode (drops that mode).
    ///
    /// Slicing an order-1 tensor yields a single-element order-1 tensor.
    pub fn slice_last(&self, k: usize) -> Result<Self> {
        let n = *self.shape.last().expect("order >= 1");
        if k >= n {
            return Err(Error::Shape(format!(
                "slice index {k} out of range for trailing extent {n}"
            )));
        }
        let data: Vec<f64> = self.data.iter().skip(k).step_by(n).copied().collect();
        let shape = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[..self.shape.len() - 1].to_vec()
        };
        Ok(Self { shape, data })
    }
}

/// Square root of the sum of squared elements.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖a‖_F`, with `0` when both are zero and `∞` when only `a` is.
pub fn relative_error(reference: &DenseTensor, approx: &DenseTensor) -> Result<f64> {
    let diff = frobenius_norm(&reference.sub(approx)?);
    let base = frobenius_norm(reference);
    Ok(if base == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / base
    })
}

/// (P, I_n, Q) factorisation of a shape around `mode`.
fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let pre = shape[..mode].iter().product();
    let post = shape[mode + 1..].iter().product();
    (pre, shape[mode], post)
}

fn check_mode(t: &DenseTensor, mode: usize) -> Result<()> {
    if mode >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: t.order(),
        });
    }
    Ok(())
}

/// Mode-`n` product `T ×_n B` with `B` of shape `J × I_n`:
/// `C[.., j, ..] = Σ_i T[.., i, ..] · B[j, i]`.
pub fn mode_n_product(t: &DenseTensor, b: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    check_mode(t, mode)?;
    let (j_dim, i_dim) = b.expect_matrix("mode_n_product")?;
    if i_dim != t.shape[mode] {
        return Err(Error::Shape(format!(
            "mode-{mode} product: matrix has {i_dim} columns but tensor extent is {}",
            t.shape[mode]
        )));
    }
    let (pre, _, post) = split_at_mode(&t.shape, mode);
    let mut out = vec![0.0; pre * j_dim * post];
    for p in 0..pre {
        let src = &t.data[p * i_dim * post..(p + 1) * i_dim * post];
        let dst = &mut out[p * j_dim * post..(p + 1) * j_dim * post];
        for j in 0..j_dim {
            let drow = &mut dst[j * post..(j + 1) * post];
            for i in 0..i_dim {
                let coef = b.data[j * i_dim + i];
                if coef == 0.0 {
                    continue;
                }
                let srow = &src[i * post..(i + 1) * post];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += coef * s;
                }
            }
        }
    }
    let mut shape = t.shape.clone();
    shape[mode] = j_dim;
    Ok(DenseTensor { shape, data: out })
}

/// Mode-`n` unfolding of a tensor together with the information needed to fold it back.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUnfolding {
    pub matrix: DenseTensor,
    pub source_shape: Vec<usize>,
    pub mode: usize,
}

pub fn unfold(t: &DenseTensor, mode: usize) -> Result<ModeUnfolding> {
    check_mode(t, mode)?;
    let (pre, rows, post) = split_at_mode(&t.shape, mode);
    let cols = pre * post;
    let mut out = vec![0.0; rows * cols];
    for p in 0..pre {
        for i in 0..rows {
            let src = &t.data[(p * rows + i) * post..(p * rows + i + 1) * post];
            out[i * cols + p * post..i * cols + (p + 1) * post].copy_from_slice(src);
        }
    }
    Ok(ModeUnfolding {
        matrix: DenseTensor {
            shape: vec![rows, cols],
            data: out,
        },
        source_shape: t.shape.clone(),
        mode,
    })
}

/// Inverse of [`unfold`]: rebuilds a tensor of `target_shape` from its mode-`n` unfolding.
pub fn fold(m: &DenseTensor, mode: usize, target_shape: &[usize]) -> Result<DenseTensor> {
    check_shape(target_shape)?;
    if mode >= target_shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: target_shape.len(),
        });
    }
    let (r, c) = m.expect_matrix("fold")?;
    let (pre, rows, post) = split_at_mode(target_shape, mode);
    if r != rows || c != pre * post {
        return Err(Error::Shape(format!(
            "cannot fold a {r}x{c} matrix at mode {mode} into shape {target_shape:?} \
             (expected {rows}x{})",
            pre * post
        )));
    }
    let mut out = vec![0.0; rows * c];
    for p in 0..pre {
        for i in 0..rows {
            out[(p * rows + i) * post..(p * rows + i + 1) * post]
                .copy_from_slice(&m.data[i * c + p * post..i * c + (p + 1) * post]);
        }
    }
    Ok(DenseTensor {
        shape: target_shape.to_vec(),
        data: out,
    })
}

/// Stacks `K` equally-shaped tensors along a new trailing mode: result shape `S × K`,
/// with `result.slice_last(k) == tensors[k]`.
pub fn stack(tensors: &[DenseTensor]) -> Result<DenseTensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
    if let Some((i, t)) = tensors
        .iter()
        .enumerate()
        .find(|(_, t)| t.shape != first.shape)
    {
        return Err(Error::Shape(format!(
            "stack input {i} has shape {:?}, expected {:?}",
            t.shape, first.shape
        )));
    }
    let k = tensors.len();
    let mut data = vec![0.0; first.len() * k];
    for (slot, t) in tensors.iter().enumerate() {
        for (o, &v) in t.data.iter().enumerate() {
            data[o * k + slot] = v;
        }
    }
    let mut shape = first.shape.clone();
    shape.push(k);
    Ok(DenseTensor { shape, data })
}

/// Inverse of [`stack`]: every slice along the trailing mode.
pub fn unstack(t: &DenseTensor) -> Result<Vec<DenseTensor>> {
    if t.order() < 2 {
        return Err(Error::Shape("unstack needs a tensor of order >= 2".into()));
    }
    let k = *t.shape.last().expect("order >= 2");
    (0..k).map(|i| t.slice_last(i)).collect()
}
