//! Dense row-major matrices and the handful of kernels the models need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn view(&self) -> MatRef<'_> {
        MatRef::new(self.rows, self.cols, &self.data)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim("DenseMatrix::matmul", self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim("DenseMatrix::matvec", self.cols, x.len()));
        }
        let mut out = vec![0.0; self.rows];
        self.view().matvec_acc(x, &mut out);
        Ok(out)
    }
}

/// Borrowed row-major view, used to read weight blocks straight out of a
/// flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> MatRef<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    /// `out += M x`
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += dot(row, x);
        }
    }

    /// `out += Mᵀ y`
    #[inline]
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += m * yr;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `grad += scale · y xᵀ`, with `grad` row-major `(y.len() × x.len())`.
#[inline]
pub fn outer_acc(y: &[f64], x: &[f64], scale: f64, grad: &mut [f64]) {
    debug_assert_eq!(grad.len(), y.len() * x.len());
    for (r, &yr) in y.iter().enumerate() {
        let s = yr * scale;
        if s == 0.0 {
            continue;
        }
        let row = &mut grad[r * x.len()..(r + 1) * x.len()];
        for (g, &xc) in row.iter_mut().zip(x) {
            *g += s * xc;
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖₂ / max(‖b‖₂, floor)`
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm2(b).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree() {
        let m = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        m.view().matvec_t_acc(&[1.0, 1.0], &mut out);
        assert_eq!(out, m.transpose().matvec(&[1.0, 1.0]).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        let a = DenseMatrix::identity(2);
        let b = DenseMatrix::zeros(3, 1);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn outer_accumulates() {
        let mut g = vec![0.0; 4];
        outer_acc(&[1.0, 2.0], &[3.0, 4.0], 0.5, &mut g);
        assert_eq!(g, vec![1.5, 2.0, 3.0, 4.0]);
    }
}
