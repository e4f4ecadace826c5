//! Minimisation over the Gaussian variable `u` for a fixed scale `z`.
//!
//! With `A_z = A·Diag(z)` the objective is
//! `½‖y − A_z u‖² + ½ uᵀP⁻¹u`, whose minimiser solves
//! `(A_zᵀA_z + P⁻¹) u = A_zᵀ y`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::linalg::power_iteration;
use crate::sensing::SensingModel;

/// Structural family of the prior covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceKind {
    ScaledIdentity,
    Diagonal,
    Tridiagonal,
    Full,
}

impl CovarianceKind {
    /// Number of free scalars for a signal of length `n`.
    pub fn dim(self, n: usize) -> usize {
        match self {
            CovarianceKind::ScaledIdentity => 1,
            CovarianceKind::Diagonal => n,
            CovarianceKind::Tridiagonal => (2 * n).saturating_sub(1),
            CovarianceKind::Full => n * (n + 1) / 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::ScaledIdentity => "scaled_identity",
            CovarianceKind::Diagonal => "diagonal",
            CovarianceKind::Tridiagonal => "tridiagonal",
            CovarianceKind::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "scaled_identity" | "identity" => CovarianceKind::ScaledIdentity,
            "diagonal" => CovarianceKind::Diagonal,
            "tridiagonal" => CovarianceKind::Tridiagonal,
            "full" => CovarianceKind::Full,
            _ => return None,
        })
    }
}

/// Raw parameters of the prior covariance.
///
/// Scaled identity and diagonal realise `P = Diag(max(λ, ε))`. Tridiagonal
/// and full realise `P = L Lᵀ + εI` with `L` lower bidiagonal or lower
/// triangular respectively.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceStructure {
    ScaledIdentity { n: usize, lambda: f64 },
    Diagonal { lambda: Vec<f64> },
    /// `diag` is the main diagonal of `L`, `sub` the first subdiagonal.
    Tridiagonal { diag: Vec<f64>, sub: Vec<f64> },
    /// Lower triangle of `L`, row-major (`(0,0), (1,0), (1,1), (2,0), …`).
    Full { n: usize, lower: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceParam {
    pub structure: CovarianceStructure,
    pub eps: f64,
}

/// Index of `L[i][j]` (`j ≤ i`) in the packed lower triangle.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl CovarianceParam {
    pub fn scaled_identity(n: usize, lambda: f64, eps: f64) -> Self {
        CovarianceParam {
            structure: CovarianceStructure::ScaledIdentity { n, lambda },
            eps,
        }
    }

    pub fn diagonal(lambda: Vec<f64>, eps: f64) -> Self {
        CovarianceParam {
            structure: CovarianceStructure::Diagonal { lambda },
            eps,
        }
    }

    pub fn tridiagonal(diag: Vec<f64>, sub: Vec<f64>, eps: f64) -> Result<Self> {
        if diag.is_empty() || sub.len() + 1 != diag.len() {
            return Err(Error::InvalidDimension(format!(
                "tridiagonal factor needs sub length n-1, got n={} sub={}",
                diag.len(),
                sub.len()
            )));
        }
        Ok(CovarianceParam {
            structure: CovarianceStructure::Tridiagonal { diag, sub },
            eps,
        })
    }

    pub fn full(n: usize, lower: Vec<f64>, eps: f64) -> Result<Self> {
        check_len("full covariance factor", n * (n + 1) / 2, lower.len())?;
        Ok(CovarianceParam {
            structure: CovarianceStructure::Full { n, lower },
            eps,
        })
    }

    /// Starting point whose realised `P` has every diagonal entry equal to
    /// `init` (and zero off-diagonal).
    pub fn initial(kind: CovarianceKind, n: usize, init: f64, eps: f64) -> Result<Self> {
        let root = libm::sqrt((init - eps).max(0.0));
        match kind {
            CovarianceKind::ScaledIdentity => Ok(Self::scaled_identity(n, init, eps)),
            CovarianceKind::Diagonal => Ok(Self::diagonal(vec![init; n], eps)),
            CovarianceKind::Tridiagonal => {
                Self::tridiagonal(vec![root; n], vec![0.0; n.saturating_sub(1)], eps)
            }
            CovarianceKind::Full => {
                let mut lower = vec![0.0; n * (n + 1) / 2];
                for i in 0..n {
                    lower[tri_index(i, i)] = root;
                }
                Self::full(n, lower, eps)
            }
        }
    }

    pub fn kind(&self) -> CovarianceKind {
        match self.structure {
            CovarianceStructure::ScaledIdentity { .. } => CovarianceKind::ScaledIdentity,
            CovarianceStructure::Diagonal { .. } => CovarianceKind::Diagonal,
            CovarianceStructure::Tridiagonal { .. } => CovarianceKind::Tridiagonal,
            CovarianceStructure::Full { .. } => CovarianceKind::Full,
        }
    }

    pub fn n(&self) -> usize {
        match &self.structure {
            CovarianceStructure::ScaledIdentity { n, .. } => *n,
            CovarianceStructure::Diagonal { lambda } => lambda.len(),
            CovarianceStructure::Tridiagonal { diag, .. } => diag.len(),
            CovarianceStructure::Full { n, .. } => *n,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim(self.n())
    }

    /// Free parameters in storage order.
    pub fn to_flat(&self) -> Vec<f64> {
        match &self.structure {
            CovarianceStructure::ScaledIdentity { lambda, .. } => vec![*lambda],
            CovarianceStructure::Diagonal { lambda } => lambda.clone(),
            CovarianceStructure::Tridiagonal { diag, sub } => {
                let mut v = diag.clone();
                v.extend_from_slice(sub);
                v
            }
            CovarianceStructure::Full { lower, .. } => lower.clone(),
        }
    }

    /// Overwrites the free parameters from `flat` (same order as `to_flat`).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("covariance parameters", self.dim(), flat.len())?;
        match &mut self.structure {
            CovarianceStructure::ScaledIdentity { lambda, .. } => *lambda = flat[0],
            CovarianceStructure::Diagonal { lambda } => lambda.copy_from_slice(flat),
            CovarianceStructure::Tridiagonal { diag, sub } => {
                let n = diag.len();
                diag.copy_from_slice(&flat[..n]);
                sub.copy_from_slice(&flat[n..]);
            }
            CovarianceStructure::Full { lower, .. } => lower.copy_from_slice(flat),
        }
        Ok(())
    }

    fn factor_dense(&self) -> Option<DMatrix<f64>> {
        match &self.structure {
            CovarianceStructure::Tridiagonal { diag, sub } => {
                let n = diag.len();
                let mut l = DMatrix::zeros(n, n);
                for i in 0..n {
                    l[(i, i)] = diag[i];
                }
                for i in 0..n - 1 {
                    l[(i + 1, i)] = sub[i];
                }
                Some(l)
            }
            CovarianceStructure::Full { n, lower } => {
                let mut l = DMatrix::zeros(*n, *n);
                for i in 0..*n {
                    for j in 0..=i {
                        l[(i, j)] = lower[tri_index(i, j)];
                    }
                }
                Some(l)
            }
            _ => None,
        }
    }

    /// Realises `P` and factors it for repeated application.
    pub fn materialize(&self) -> Result<Covariance> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "covariance floor must be positive, got {}",
                self.eps
            )));
        }
        match &self.structure {
            CovarianceStructure::ScaledIdentity { n, lambda } => Ok(Covariance::Diagonal {
                p: vec![lambda.max(self.eps); *n],
            }),
            CovarianceStructure::Diagonal { lambda } => Ok(Covariance::Diagonal {
                p: lambda.iter().map(|&l| l.max(self.eps)).collect(),
            }),
            _ => {
                let l = self.factor_dense().expect("factored kinds");
                let n = l.nrows();
                let p = &l * l.transpose() + DMatrix::identity(n, n) * self.eps;
                let chol = Cholesky::new(p.clone()).ok_or(Error::NotPositiveDefinite)?;
                Ok(Covariance::Dense { p, chol, factor: l })
            }
        }
    }

    /// Accumulates `coef · ∂(aᵀ P b)/∂θ` into `grad` (laid out like `to_flat`).
    pub fn accumulate_bilinear_grad(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        coef: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        check_len("covariance gradient", self.dim(), grad.len())?;
        let eps = self.eps;
        match &self.structure {
            CovarianceStructure::ScaledIdentity { lambda, .. } => {
                if *lambda > eps {
                    grad[0] += coef * a.dot(b);
                }
            }
            CovarianceStructure::Diagonal { lambda } => {
                for i in 0..lambda.len() {
                    if lambda[i] > eps {
                        grad[i] += coef * a[i] * b[i];
                    }
                }
            }
            CovarianceStructure::Tridiagonal { .. } | CovarianceStructure::Full { .. } => {
                // d(aᵀ L Lᵀ b) = Σ dL_ij (a_i (Lᵀb)_j + b_i (Lᵀa)_j)
                let l = self.factor_dense().expect("factored kinds");
                let ltb = l.tr_mul(b);
                let lta = l.tr_mul(a);
                let g = |i: usize, j: usize| coef * (a[i] * ltb[j] + b[i] * lta[j]);
                match &self.structure {
                    CovarianceStructure::Tridiagonal { diag, .. } => {
                        let n = diag.len();
                        for i in 0..n {
                            grad[i] += g(i, i);
                        }
                        for i in 0..n - 1 {
                            grad[n + i] += g(i + 1, i);
                        }
                    }
                    CovarianceStructure::Full { n, .. } => {
                        for i in 0..*n {
                            for j in 0..=i {
                                grad[tri_index(i, j)] += g(i, j);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }
}

/// A realised, factored prior covariance.
#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal {
        p: Vec<f64>,
    },
    Dense {
        p: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
        factor: DMatrix<f64>,
    },
}

impl Covariance {
    pub fn n(&self) -> usize {
        match self {
            Covariance::Diagonal { p } => p.len(),
            Covariance::Dense { p, .. } => p.nrows(),
        }
    }

    /// `P x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Diagonal { p } => DVector::from_fn(p.len(), |i, _| p[i] * x[i]),
            Covariance::Dense { p, .. } => p * x,
        }
    }

    /// `P⁻¹ x`.
    pub fn apply_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Diagonal { p } => DVector::from_fn(p.len(), |i, _| x[i] / p[i]),
            Covariance::Dense { chol, .. } => chol.solve(x),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal { p } => DMatrix::from_diagonal(&DVector::from_column_slice(p)),
            Covariance::Dense { p, .. } => p.clone(),
        }
    }

    pub fn inverse_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal { p } => {
                DMatrix::from_diagonal(&DVector::from_fn(p.len(), |i, _| 1.0 / p[i]))
            }
            Covariance::Dense { chol, .. } => chol.inverse(),
        }
    }

    /// `‖P⁻¹‖₂`.
    pub fn inverse_norm(&self) -> f64 {
        match self {
            Covariance::Diagonal { p } => p.iter().fold(0.0f64, |m, &v| m.max(1.0 / v)),
            Covariance::Dense { p, .. } => {
                let ev = p.clone().symmetric_eigenvalues();
                1.0 / ev.min()
            }
        }
    }
}

/// Which linear system produced a Tikhonov solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// `n×n` solve with `A_zᵀA_z + P⁻¹`.
    Direct,
    /// `m×m` solve with `I + A_z P A_zᵀ`.
    Woodbury,
}

/// A Tikhonov solution together with the factorisation that produced it, so
/// further solves with the same Hessian are cheap.
#[derive(Debug, Clone)]
pub struct TikhonovSolution {
    pub u: DVector<f64>,
    pub route: Route,
    factor: Cholesky<f64, Dyn>,
    /// `A_z P` for the Woodbury route.
    azp: Option<DMatrix<f64>>,
    cov_for_woodbury: Option<Covariance>,
}

impl TikhonovSolution {
    /// `(A_zᵀA_z + P⁻¹)⁻¹ v`.
    pub fn solve_hessian(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.route {
            Route::Direct => self.factor.solve(v),
            Route::Woodbury => {
                let azp = self.azp.as_ref().expect("woodbury keeps A_z P");
                let cov = self.cov_for_woodbury.as_ref().expect("woodbury keeps P");
                let t = self.factor.solve(&(azp * v));
                cov.apply(v) - azp.tr_mul(&t)
            }
        }
    }
}

/// `A·Diag(z)` from a dense `A`.
pub(crate) fn scale_columns(a: &DMatrix<f64>, z: &DVector<f64>) -> DMatrix<f64> {
    let mut az = a.clone();
    for (j, mut col) in az.column_iter_mut().enumerate() {
        col *= z[j];
    }
    az
}

fn check_inputs(z: &DVector<f64>, a: &DMatrix<f64>, y: &DVector<f64>, cov: &Covariance) -> Result<()> {
    check_len("scale vector", a.ncols(), z.len())?;
    check_len("measurement vector", a.nrows(), y.len())?;
    check_len("covariance", a.ncols(), cov.n())
}

pub(crate) fn solve_direct(
    z: &DVector<f64>,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<TikhonovSolution> {
    check_inputs(z, a, y, cov)?;
    let az = scale_columns(a, z);
    let h = az.tr_mul(&az) + cov.inverse_dense();
    let chol = Cholesky::new(h).ok_or(Error::NotPositiveDefinite)?;
    let u = chol.solve(&az.tr_mul(y));
    Ok(TikhonovSolution {
        u,
        route: Route::Direct,
        factor: chol,
        azp: None,
        cov_for_woodbury: None,
    })
}

pub(crate) fn solve_woodbury(
    z: &DVector<f64>,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<TikhonovSolution> {
    check_inputs(z, a, y, cov)?;
    let az = scale_columns(a, z);
    let azp = match cov {
        Covariance::Diagonal { p } => {
            let mut b = az.clone();
            for (j, mut col) in b.column_iter_mut().enumerate() {
                col *= p[j];
            }
            b
        }
        Covariance::Dense { p, .. } => &az * p,
    };
    let m = a.nrows();
    let mmat = &azp * az.transpose() + DMatrix::identity(m, m);
    let chol = Cholesky::new(mmat).ok_or(Error::NotPositiveDefinite)?;
    let t = chol.solve(y);
    let u = azp.tr_mul(&t);
    Ok(TikhonovSolution {
        u,
        route: Route::Woodbury,
        factor: chol,
        azp: Some(azp),
        cov_for_woodbury: Some(cov.clone()),
    })
}

/// Routed solve on a dense `A`: Woodbury when `m < n`, direct otherwise.
pub fn solve_routed(
    z: &DVector<f64>,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<TikhonovSolution> {
    if a.nrows() < a.ncols() {
        solve_woodbury(z, a, y, cov)
    } else {
        solve_direct(z, a, y, cov)
    }
}

/// `(A_zᵀA_z + P⁻¹)⁻¹ A_zᵀ y` through the `n×n` system.
pub fn tikhonov_exact(
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<DVector<f64>> {
    Ok(solve_direct(z, &model.a_dense(), y, cov)?.u)
}

/// `P A_zᵀ (I + A_z P A_zᵀ)⁻¹ y` through the `m×m` system.
pub fn tikhonov_woodbury(
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<DVector<f64>> {
    Ok(solve_woodbury(z, &model.a_dense(), y, cov)?.u)
}

/// Closed-form solution through whichever system is smaller.
pub fn tikhonov_solve(
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<DVector<f64>> {
    Ok(solve_routed(z, &model.a_dense(), y, cov)?.u)
}

/// `u − η (A_zᵀ(A_z u − y) + P⁻¹u)`.
pub fn r_u_step(
    u: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    eta: f64,
) -> Result<DVector<f64>> {
    check_len("gaussian vector", model.n(), u.len())?;
    check_len("scale vector", model.n(), z.len())?;
    check_len("measurement vector", model.m(), y.len())?;
    Ok(LinOps::new(model, y).r_u(u, z, cov, eta))
}

/// Step size rule for the accelerated `u` iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `1/L` with `L` the power-iteration estimate of `‖A_zᵀA_z + P⁻¹‖`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NagdConfig {
    pub steps: usize,
    pub eta: StepRule,
    /// Abort when the cost in `u` rises this many steps in a row and exceeds
    /// its starting value (0 disables).
    pub divergence_window: usize,
}

impl Default for NagdConfig {
    fn default() -> Self {
        NagdConfig {
            steps: 100,
            eta: StepRule::Auto,
            divergence_window: 10,
        }
    }
}

/// Momentum weight for the step that produces iterate `j` (`j ≥ 1`).
#[inline]
pub fn momentum(j: usize) -> f64 {
    1.0 - 3.0 / (6.0 + j as f64)
}

/// Matrix-vector helpers for a fixed model and measurement.
pub(crate) struct LinOps<'a> {
    pub model: &'a SensingModel,
    pub y: &'a DVector<f64>,
}

impl<'a> LinOps<'a> {
    pub fn new(model: &'a SensingModel, y: &'a DVector<f64>) -> Self {
        LinOps { model, y }
    }

    /// `A_zᵀ(A_z u − y) + P⁻¹u`.
    pub fn grad_u(&self, u: &DVector<f64>, z: &DVector<f64>, cov: &Covariance) -> DVector<f64> {
        let resid = self.model.mul(&z.component_mul(u)) - self.y;
        z.component_mul(&self.model.tr_mul(&resid)) + cov.apply_inv(u)
    }

    pub fn r_u(&self, u: &DVector<f64>, z: &DVector<f64>, cov: &Covariance, eta: f64) -> DVector<f64> {
        u - self.grad_u(u, z, cov) * eta
    }

    /// `½‖y − A_z u‖² + ½uᵀP⁻¹u`.
    pub fn cost_u(&self, u: &DVector<f64>, z: &DVector<f64>, cov: &Covariance) -> f64 {
        let resid = self.model.mul(&z.component_mul(u)) - self.y;
        0.5 * resid.norm_squared() + 0.5 * u.dot(&cov.apply_inv(u))
    }

    /// Power-iteration estimate of `‖A_zᵀA_z + P⁻¹‖`.
    pub fn hessian_norm(&self, z: &DVector<f64>, cov: &Covariance) -> f64 {
        power_iteration(z.len(), 100, 1e-8, |v| {
            z.component_mul(&self.model.tr_mul(&self.model.mul(&z.component_mul(v)))) + cov.apply_inv(v)
        })
    }

    pub fn nagd_eta(&self, z: &DVector<f64>, cov: &Covariance, rule: StepRule) -> Result<f64> {
        match rule {
            StepRule::Fixed(eta) if eta > 0.0 => Ok(eta),
            StepRule::Fixed(eta) => Err(Error::InvalidConfig(format!(
                "NAGD step size must be positive, got {eta}"
            ))),
            StepRule::Auto => Ok(1.0 / self.hessian_norm(z, cov)),
        }
    }

    /// Runs the accelerated iteration from `u0`, calling `visit(j, u_j)` on
    /// every new iterate. Returns the final iterate.
    pub fn nagd<F>(
        &self,
        u0: &DVector<f64>,
        z: &DVector<f64>,
        cov: &Covariance,
        eta: f64,
        steps: usize,
        divergence_window: usize,
        mut visit: F,
    ) -> Result<DVector<f64>>
    where
        F: FnMut(usize, &DVector<f64>),
    {
        let mut r_prev = self.r_u(u0, z, cov, eta);
        let mut u = u0.clone();
        let start_cost = if divergence_window > 0 {
            self.cost_u(u0, z, cov)
        } else {
            0.0
        };
        let mut last_cost = start_cost;
        let mut rises = 0usize;
        for j in 1..=steps {
            let r = if j == 1 { r_prev.clone() } else { self.r_u(&u, z, cov, eta) };
            let beta = momentum(j);
            let next = &r + (&r - &r_prev) * beta;
            r_prev = r;
            u = next;
            visit(j, &u);
            if divergence_window > 0 {
                let c = self.cost_u(&u, z, cov);
                if c > last_cost {
                    rises += 1;
                    // Momentum ripples also rise for a while, but stay below the start.
                    if rises >= divergence_window && c > start_cost {
                        return Err(Error::Divergence(rises));
                    }
                } else {
                    rises = 0;
                }
                last_cost = c;
            }
        }
        Ok(u)
    }
}

/// Accelerated gradient approximation of the Tikhonov solution.
pub fn tikhonov_nagd(
    u0: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    cfg: &NagdConfig,
) -> Result<DVector<f64>> {
    Ok(tikhonov_nagd_trace(u0, z, model, y, cov, cfg)?.0)
}

/// As [`tikhonov_nagd`], also returning the cost in `u` after every step and
/// the step size used.
pub fn tikhonov_nagd_trace(
    u0: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    cfg: &NagdConfig,
) -> Result<(DVector<f64>, Vec<f64>, f64)> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("NAGD needs at least one step".into()));
    }
    check_len("initial gaussian vector", model.n(), u0.len())?;
    check_len("scale vector", model.n(), z.len())?;
    check_len("measurement vector", model.m(), y.len())?;
    let ops = LinOps::new(model, y);
    let eta = ops.nagd_eta(z, cov, cfg.eta)?;
    let mut costs = Vec::with_capacity(cfg.steps);
    let u = ops.nagd(u0, z, cov, eta, cfg.steps, cfg.divergence_window, |_, u| {
        costs.push(ops.cost_u(u, z, cov));
    })?;
    Ok((u, costs, eta))
}
