//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use cg_invert_core::sensing::SensingModel;
use cg_invert_core::tikhonov::{CovarianceKind, CovarianceParam};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const KINDS: [CovarianceKind; 4] = [
    CovarianceKind::ScaledIdentity,
    CovarianceKind::Diagonal,
    CovarianceKind::Tridiagonal,
    CovarianceKind::Full,
];

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn dense_model(m: usize, n: usize, rng: &mut ChaCha8Rng) -> SensingModel {
    let scale = 1.0 / (m as f64).sqrt();
    let a = DMatrix::from_fn(m, n, |_, _| normal(rng) * scale);
    SensingModel::from_dense(a).unwrap()
}

/// A covariance of the given kind with randomised parameters.
pub fn random_cov(kind: CovarianceKind, n: usize, rng: &mut ChaCha8Rng) -> CovarianceParam {
    let mut p = CovarianceParam::initial(kind, n, 1.0, 1e-3).unwrap();
    let flat: Vec<f64> = p
        .to_flat()
        .iter()
        .map(|&v| match kind {
            CovarianceKind::ScaledIdentity | CovarianceKind::Diagonal => rng.random_range(0.2..2.0),
            _ => v * rng.random_range(0.5..1.5) + 0.3 * normal(rng),
        })
        .collect();
    p.set_flat(&flat).unwrap();
    p
}

/// Dense `P` rebuilt from the parameter layout by hand.
pub fn cov_dense(p: &CovarianceParam) -> DMatrix<f64> {
    let n = p.n();
    let flat = p.to_flat();
    let eps = p.eps;
    match p.kind() {
        CovarianceKind::ScaledIdentity => DMatrix::identity(n, n) * flat[0].max(eps),
        CovarianceKind::Diagonal => DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| flat[i].max(eps))),
        CovarianceKind::Tridiagonal => {
            let mut l = DMatrix::zeros(n, n);
            for i in 0..n {
                l[(i, i)] = flat[i];
            }
            for i in 0..n - 1 {
                l[(i + 1, i)] = flat[n + i];
            }
            &l * l.transpose() + DMatrix::identity(n, n) * eps
        }
        CovarianceKind::Full => {
            let mut l = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in 0..=i {
                    l[(i, j)] = flat[k];
                    k += 1;
                }
            }
            &l * l.transpose() + DMatrix::identity(n, n) * eps
        }
    }
}

/// `μ Σ ln² z` by scalar loop.
pub fn log_squared(z: &DVector<f64>, mu: f64) -> f64 {
    let mut s = 0.0;
    for &v in z.iter() {
        let l = v.ln();
        s += l * l;
    }
    mu * s
}

/// `½‖y − A(z⊙u)‖²` by scalar loops.
pub fn data_fit(a: &DMatrix<f64>, y: &DVector<f64>, u: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        let mut pred = 0.0;
        for c in 0..a.ncols() {
            pred += a[(r, c)] * z[c] * u[c];
        }
        s += (y[r] - pred) * (y[r] - pred);
    }
    0.5 * s
}

/// `½ uᵀ P⁻¹ u` through an explicit inverse.
pub fn prior_term(p: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let inv = p.clone().try_inverse().unwrap();
    0.5 * (u.transpose() * inv * u)[(0, 0)]
}

/// Largest singular value of `A·Diag(u)` by SVD.
pub fn sigma_max_scaled(a: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let mut au = a.clone();
    for (j, mut col) in au.column_iter_mut().enumerate() {
        col *= u[j];
    }
    au.singular_values().max()
}

/// `max(0, −min h'')` for `h = μ ln²` sampled on a fine log grid.
pub fn log_squared_rho(mu: f64) -> f64 {
    let mut lo = f64::INFINITY;
    for k in 0..200_001 {
        let x = (-5.0 + 10.0 * k as f64 / 200_000.0).exp();
        let h2 = 2.0 * mu * (1.0 - x.ln()) / (x * x);
        lo = lo.min(h2);
    }
    (-lo).max(0.0)
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
