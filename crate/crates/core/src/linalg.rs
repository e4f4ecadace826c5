//! Sparse and dense operator plumbing shared by the solver and the network.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.rows, |r, _| self.row(r).map(|(c, v)| v * x[c]).sum())
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.cols);
        for r in 0..self.rows {
            let xr = x[r];
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

/// A linear map stored either densely or in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Dense(DMatrix<f64>),
    Sparse(Csr),
}

impl Operator {
    pub fn rows(&self) -> usize {
        match self {
            Operator::Dense(m) => m.nrows(),
            Operator::Sparse(s) => s.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Operator::Dense(m) => m.ncols(),
            Operator::Sparse(s) => s.cols,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator input", self.cols(), x.len())?;
        Ok(match self {
            Operator::Dense(m) => m * x,
            Operator::Sparse(s) => s.mul_vec(x),
        })
    }

    pub fn adjoint(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator adjoint input", self.rows(), x.len())?;
        Ok(match self {
            Operator::Dense(m) => m.tr_mul(x),
            Operator::Sparse(s) => s.tr_mul_vec(x),
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Operator::Dense(m) => m.clone(),
            Operator::Sparse(s) => s.to_dense(),
        }
    }

    /// Row-major `(row, col, value)` listing of the structurally nonzero entries.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match self {
            Operator::Dense(m) => {
                let mut out = Vec::new();
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let v = m[(r, c)];
                        if v != 0.0 {
                            out.push((r, c, v));
                        }
                    }
                }
                out
            }
            Operator::Sparse(s) => (0..s.rows)
                .flat_map(|r| s.row(r).map(move |(c, v)| (r, c, v)))
                .collect(),
        }
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite map given only by
/// its action, by power iteration from a fixed pseudo-random start.
pub fn power_iteration<F>(n: usize, iters: usize, tol: f64, mut apply: F) -> f64
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_a11);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let nv = v.norm();
    v /= nv;
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        let done = libm::fabs(next - lambda) <= tol * libm::fabs(next);
        lambda = next;
        if done {
            break;
        }
    }
    // One more Rayleigh quotient against the final iterate.
    let w = apply(&v);
    let rq = v.dot(&w);
    if rq > lambda {
        rq
    } else {
        lambda
    }
}

/// Spectral norm estimate of an operator through `power_iteration` on `AᵀA`.
pub fn spectral_norm(op: &Operator, iters: usize, tol: f64) -> f64 {
    let ev = power_iteration(op.cols(), iters, tol, |v| match op {
        Operator::Dense(m) => m.tr_mul(&(m * v)),
        Operator::Sparse(s) => s.tr_mul_vec(&s.mul_vec(v)),
    });
    libm::sqrt(ev.max(0.0))
}

/// Elementwise `max(x, floor)` that maps `-0.0` and anything at or below the
/// floor onto the floor itself.
#[inline]
pub fn floor_at(x: f64, floor: f64) -> f64 {
    if x > floor {
        x
    } else {
        floor
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}
