//! Dense row-major node matrices and per-edge value vectors.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Row-major `rows x cols` matrix of node features or node gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// Entries drawn uniformly from `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-1.0..1.0)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_err(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                rhs.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(shape_err(
                "t_matmul",
                format!("lhs rows == rhs rows ({})", self.rows),
                rhs.rows,
            ));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for (i, &a) in self.row(k).iter().enumerate() {
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(shape_err(
                "matmul_t",
                format!("lhs cols == rhs cols ({})", self.cols),
                rhs.cols,
            ));
        }
        Ok(Self::from_fn(self.rows, rhs.rows, |i, j| dot(self.row(i), rhs.row(j))))
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(shape_err(
                "add",
                format!("{:?}", self.shape()),
                format!("{:?}", rhs.shape()),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub(crate) fn expect_shape(&self, op: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(shape_err(
                op,
                format!("{rows}x{cols}"),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Per-edge values aligned to CSR edge order: `values[e]` belongs to edge
/// `(coo_src[e], coo_dst[e])`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScalars<T> {
    values: Vec<T>,
}

impl<T: Scalar> EdgeScalars<T> {
    pub fn zeros(num_edges: usize) -> Self {
        Self {
            values: vec![T::zero(); num_edges],
        }
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self::from_vec(self.values.iter().map(|&x| x * alpha).collect())
    }

    /// First edge holding a NaN or infinity. Kernels propagate non-finite
    /// values rather than clamping them; this is how callers detect them.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|x| !x.is_finite())
    }

    pub(crate) fn expect_len(&self, op: &'static str, num_edges: usize) -> Result<()> {
        if self.values.len() != num_edges {
            return Err(shape_err(op, format!("{num_edges} edge values"), self.values.len()));
        }
        Ok(())
    }
}

/// Largest elementwise difference between two equally shaped matrices,
/// relative to the largest magnitude in `reference`. Returns the relative
/// error, the absolute difference and its `(row, col)` location.
pub fn max_rel_diff<T: Scalar, U: Scalar>(
    actual: &DenseMatrix<T>,
    reference: &DenseMatrix<U>,
) -> (f64, f64, usize, usize) {
    assert_eq!(actual.shape(), reference.shape(), "max_rel_diff shape mismatch");
    let scale = reference.max_abs().as_f64();
    let mut worst = (0.0f64, 0usize, 0usize);
    for r in 0..actual.rows() {
        for c in 0..actual.cols() {
            let d = (actual.get(r, c).as_f64() - reference.get(r, c).as_f64()).abs();
            if d > worst.0 || d.is_nan() {
                worst = (d, r, c);
            }
        }
    }
    let rel = if worst.0 == 0.0 {
        0.0
    } else if scale > 0.0 {
        worst.0 / scale
    } else {
        f64::INFINITY
    };
    (rel, worst.0, worst.1, worst.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = DenseMatrix::<f64>::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = DenseMatrix::<f64>::from_vec(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[4., 5., 10., 11.]);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn rel_diff_reports_location() {
        let a = DenseMatrix::<f32>::from_vec(2, 2, vec![1., 2., 3., 4.5]).unwrap();
        let b = DenseMatrix::<f64>::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let (rel, abs, r, c) = max_rel_diff(&a, &b);
        assert_eq!((r, c), (1, 1));
        assert!((abs - 0.5).abs() < 1e-12 && (rel - 0.125).abs() < 1e-12);
        assert_eq!(max_rel_diff(&b, &b).0, 0.0);
    }
}
