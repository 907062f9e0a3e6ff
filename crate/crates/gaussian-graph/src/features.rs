//! Dense row-major feature matrix: one row per Gaussian, `dim` channels.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("row count mismatch: expected {expected}, got {got}")]
    RowMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "feature buffer size mismatch");
        Self { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Gather the listed rows into a new matrix, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self {
            rows: 0,
            dim: self.dim,
            data: Vec::with_capacity(indices.len() * self.dim),
        };
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
            out.rows += 1;
        }
        out
    }

    /// `self * weight` where `weight` is `dim x out_dim` row-major.
    pub fn matmul(&self, weight: &[f64], out_dim: usize) -> Self {
        assert_eq!(weight.len(), self.dim * out_dim, "weight shape mismatch");
        let mut out = Self::zeros(self.rows, out_dim);
        for r in 0..self.rows {
            let x = self.row(r);
            let y = out.row_mut(r);
            for (k, &xk) in x.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let wrow = &weight[k * out_dim..(k + 1) * out_dim];
                for (yj, &wj) in y.iter_mut().zip(wrow) {
                    *yj += xk * wj;
                }
            }
        }
        out
    }

    /// `self^T * other` for equal row counts: a `dim x other.dim` matrix.
    pub fn transpose_matmul(&self, other: &Self) -> Vec<f64> {
        assert_eq!(self.rows, other.rows);
        let mut out = vec![0.0; self.dim * other.dim];
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let orow = &mut out[i * other.dim..(i + 1) * other.dim];
                for (o, &bj) in orow.iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        out
    }

    /// `self * weight^T` where `weight` is `p x dim` row-major: `rows x p`.
    pub fn matmul_transpose(&self, weight: &[f64], p: usize) -> Self {
        assert_eq!(weight.len(), p * self.dim);
        let mut out = Self::zeros(self.rows, p);
        for r in 0..self.rows {
            let a = self.row(r);
            let orow = out.row_mut(r);
            for (i, o) in orow.iter_mut().enumerate() {
                let wrow = &weight[i * self.dim..(i + 1) * self.dim];
                let mut acc = 0.0;
                for (&av, &wv) in a.iter().zip(wrow) {
                    acc += av * wv;
                }
                *o = acc;
            }
        }
        out
    }

    /// Sum over rows: a `dim`-vector.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// `self += scale * other`, shapes must match.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn add_bias(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.dim);
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}
