//! Dense row-major matrices and the three matmul kernels.
//!
//! The kernels compute `A*B`, `A*B^T` and `A^T*B` without materializing the
//! transpose. All three accumulate over the contraction index in ascending
//! order, so computing the same logical product through different kernels
//! (with pre-transposed operands) yields bit-identical results.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("matrix entries must be finite".into()));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, values }
    }

    /// Entries drawn uniformly from [-1, 1).
    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    /// Rectangular slice `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> DenseMatrix {
        debug_assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let mut values = Vec::with_capacity(nr * nc);
        for r in r0..r0 + nr {
            values.extend_from_slice(&self.values[r * self.cols + c0..r * self.cols + c0 + nc]);
        }
        DenseMatrix { rows: nr, cols: nc, values }
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self * b`.
    pub fn matmul_nn(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}: inner dimensions differ",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, b.cols);
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += self.values[r * k + t] * b.values[t * n + c];
                }
                out.values[r * n + c] = acc;
            }
        }
        Ok(out)
    }

    /// `self * b^T` with `b` stored untransposed (`b` is `n x k`).
    pub fn matmul_nt(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.cols {
            return Err(Error::Shape(format!(
                "matmul-nt {}x{} * ({}x{})^T: contraction dimensions differ",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, b.rows);
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += self.values[r * k + t] * b.values[c * k + t];
                }
                out.values[r * n + c] = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * b` with `self` stored untransposed (`self` is `k x m`).
    pub fn matmul_tn(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != b.rows {
            return Err(Error::Shape(format!(
                "matmul-tn ({}x{})^T * {}x{}: contraction dimensions differ",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let (k, m, n) = (self.rows, self.cols, b.cols);
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += self.values[t * m + r] * b.values[t * n + c];
                }
                out.values[r * n + c] = acc;
            }
        }
        Ok(out)
    }
}

/// Which kernel carries a logical `A*B`: straight, with `B` pre-transposed,
/// or with `A` pre-transposed. Declaration order is the tie-break order for
/// the autotuner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum MatmulMode {
    NN,
    NT,
    TN,
}

impl MatmulMode {
    pub const ALL: [MatmulMode; 3] = [MatmulMode::NN, MatmulMode::NT, MatmulMode::TN];
}

impl fmt::Display for MatmulMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatmulMode::NN => "nn",
            MatmulMode::NT => "nt",
            MatmulMode::TN => "tn",
        };
        f.write_str(s)
    }
}

/// Logical `a * b` computed through the chosen kernel, pre-transposing the
/// operand that kernel expects transposed.
pub fn matmul_with_mode(a: &DenseMatrix, b: &DenseMatrix, mode: MatmulMode) -> Result<DenseMatrix> {
    match mode {
        MatmulMode::NN => a.matmul_nn(b),
        MatmulMode::NT => a.matmul_nt(&b.transpose()),
        MatmulMode::TN => a.transpose().matmul_tn(b),
    }
}
