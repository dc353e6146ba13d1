//! Dense symmetric positive-definite solve.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    /// Cholesky factorization `A = L Lᵀ`. Returns `None` when a pivot falls
    /// below `rel_tol` times the largest diagonal entry.
    pub fn cholesky(&self, rel_tol: f64) -> Option<Cholesky> {
        let n = self.dim;
        let scale = (0..n).map(|i| self.get(i, i)).fold(0.0f64, f64::max);
        let tol = if scale > 0.0 { scale * rel_tol } else { rel_tol };
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !(diag > tol) {
                return None;
            }
            let root = libm::sqrt(diag);
            l.set(j, j, root);
            for i in (j + 1)..n {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, v / root);
            }
        }
        Some(Cholesky { lower: l })
    }
}

pub(crate) struct Cholesky {
    lower: SquareMatrix,
}

impl Cholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let l = &self.lower;
        let n = l.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = rhs[i];
            for k in 0..i {
                v -= l.get(i, k) * y[k];
            }
            y[i] = v / l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l.get(k, i) * x[k];
            }
            x[i] = v / l.get(i, i);
        }
        x
    }
}
