//! Dense row-major `f64` tensors and the handful of shaped primitives the
//! network layers are built from.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], fill: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds an `[m, n]` tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(&[rows.len(), n], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index of rank {} into tensor of rank {}",
                idx.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (k, (&i, &extent)) in idx.iter().zip(&self.shape).enumerate() {
            if i >= extent {
                return Err(Error::shape(format!(
                    "index {i} out of bounds for axis {k} of extent {extent}"
                )));
            }
            off = off * extent + i;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "axpy of {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Copies out the `[idx, ...]` sub-tensor along axis 0.
    pub fn index_axis0(&self, idx: usize) -> Result<Tensor> {
        let (&n, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::shape("index_axis0 on scalar"))?;
        if idx >= n {
            return Err(Error::shape(format!("row {idx} out of {n}")));
        }
        let row: usize = rest.iter().product();
        Tensor::from_vec(rest, self.data[idx * row..(idx + 1) * row].to_vec())
    }

    /// Gathers rows along axis 0 in the given order.
    pub fn select_axis0(&self, rows: &[usize]) -> Result<Tensor> {
        let (&n, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::shape("select_axis0 on scalar"))?;
        let row: usize = rest.iter().product();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            if r >= n {
                return Err(Error::shape(format!("row {r} out of {n}")));
            }
            data.extend_from_slice(&self.data[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor::from_vec(&shape, data)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack of differently shaped tensors"));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    /// Concatenates along `axis`; all other extents must match.
    pub fn concat(items: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(format!("axis {axis} out of rank {rank}")));
        }
        for t in items {
            let compatible = t.rank() == rank
                && t.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat of {:?} with {:?} along axis {axis}",
                    t.shape, first.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = items.iter().map(|t| t.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for t in items {
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Tensor::from_vec(&shape, data)
    }

    /// Inverse of [`Tensor::concat`]: splits `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if axis >= self.rank() || sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::shape(format!(
                "cannot split axis {axis} of {:?} into {sizes:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &size in sizes {
            let mut shape = self.shape.clone();
            shape[axis] = size;
            let mut data = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&self.data[base..base + size * inner]);
            }
            out.push(Tensor::from_vec(&shape, data)?);
            start += size;
        }
        Ok(out)
    }

    /// Row-major matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        match (self.shape.as_slice(), other.shape.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = Tensor::zeros(&[m, n]);
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    Mat::row_major(&self.data, k),
                    Mat::row_major(&other.data, n),
                    0.0,
                    &mut out.data,
                    n,
                );
                Ok(out)
            }
            (a, b) => Err(Error::shape(format!("matmul of {a:?} by {b:?}"))),
        }
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let &[m, n] = self.shape.as_slice() else {
            return Err(Error::shape(format!("transpose of {:?}", self.shape)));
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(&[n, m], out)
    }
}

/// I.i.d. uniform samples in `[-bound, bound]`.
pub fn uniform_init(rng: &mut Rng, shape: &[usize], bound: f64) -> Result<Tensor> {
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("init bound must be > 0, got {bound}")));
    }
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Strided read-only view of a matrix used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> Mat<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `[rows, cols]` buffer, seen as `[cols, rows]`.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    /// Sliding windows over a single row: element `(i, j)` is `data[j * step + i]`.
    /// This is the unrolled patch matrix of a one-row, one-channel convolution
    /// without the copy.
    pub fn windows(data: &'a [f64], step: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: step as isize,
        }
    }

    /// Offset view starting at `start` with the given row stride.
    pub fn strided(data: &'a [f64], start: usize, row_stride: usize) -> Self {
        Self {
            data: &data[start..],
            row_stride: row_stride as isize,
            col_stride: 1,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * self.row_stride as usize + (cols - 1) * self.col_stride as usize
    }
}

/// `c = alpha * a·b + beta * c` with `a: [m,k]`, `b: [k,n]`, `c` row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: Mat<'_>,
    b: Mat<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len().max(1) || k == 0);
    assert!(b.max_offset(k, n) < b.data.len().max(1) || k == 0);
    assert!((m - 1) * ldc + n <= c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
