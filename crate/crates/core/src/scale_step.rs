//! One descent step in the scale variable `z` for a fixed `u`.
//!
//! The smooth part is `f(z) = ½‖A_u z − y‖²` with `A_u = A·Diag(u)`. The
//! projected variant folds `R` into the gradient and projects onto the
//! domain; the proximal variant handles `R` through its prox.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::linalg::power_iteration;
use crate::regularizer::{RegularizerKind, ScaleRegularizer};
use crate::sensing::SensingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZStepMethod {
    /// Projected gradient on `f + R`.
    Pgd,
    /// Gradient step on `f` followed by the prox of `R`.
    Ista,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZStepSize {
    Fixed(f64),
    /// `1/L` from a Lipschitz estimate at the current point.
    Auto,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinesearchConfig {
    pub step: ZStepSize,
    pub alpha: f64,
    pub shrink: f64,
    pub eta_init: f64,
    pub max_halvings: u32,
}

impl Default for LinesearchConfig {
    fn default() -> Self {
        LinesearchConfig {
            step: ZStepSize::Backtracking,
            alpha: 0.3,
            shrink: 0.5,
            eta_init: 1.0,
            max_halvings: 50,
        }
    }
}

impl LinesearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad("linesearch alpha must lie in (0, 0.5]");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("linesearch shrink must lie in (0, 1)");
        }
        if !(self.eta_init > 0.0 && self.eta_init <= 1.0) {
            return bad("linesearch eta_init must lie in (0, 1]");
        }
        if let ZStepSize::Fixed(eta) = self.step {
            if !(eta > 0.0) {
                return bad("fixed z step must be positive");
            }
        }
        Ok(())
    }
}

/// Outcome of one scale update.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStep {
    pub z: DVector<f64>,
    pub eta: f64,
    pub halvings: u32,
    /// Constant `c` for which `F(z) − F(z') ≥ c‖z' − z‖²` is guaranteed.
    pub decrease_const: f64,
    /// Lipschitz estimate used by the fixed or automatic step rule.
    pub lipschitz: Option<f64>,
}

/// `u ⊙ Aᵀ(A(u⊙z) − y)`.
pub(crate) fn data_gradient(model: &SensingModel, y: &DVector<f64>, u: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let resid = model.mul(&u.component_mul(z)) - y;
    u.component_mul(&model.tr_mul(&resid))
}

/// `f(z + d) − f(z)` from the residual at `z`, as `⟨A_u d, r⟩ + ½‖A_u d‖²`.
fn data_change(model: &SensingModel, u: &DVector<f64>, resid: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let ad = model.mul(&u.component_mul(d));
    ad.dot(resid) + 0.5 * ad.norm_squared()
}

/// `‖A_u‖²` by power iteration.
pub fn data_lipschitz(model: &SensingModel, u: &DVector<f64>) -> f64 {
    power_iteration(u.len(), 100, 1e-10, |v| {
        u.component_mul(&model.tr_mul(&model.mul(&u.component_mul(v))))
    })
}

fn check(z: &DVector<f64>, u: &DVector<f64>, model: &SensingModel, y: &DVector<f64>) -> Result<()> {
    check_len("scale vector", model.n(), z.len())?;
    check_len("gaussian vector", model.n(), u.len())?;
    check_len("measurement vector", model.m(), y.len())
}

fn bounds(a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64) {
    let lo = a.min().min(b.min());
    let hi = a.max().max(b.max());
    (lo, hi)
}

/// The projected-gradient map at a fixed step size.
pub(crate) fn pgd_map(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    eta: f64,
) -> Result<DVector<f64>> {
    let grad = full_gradient(z, u, model, y, reg)?;
    Ok(reg.project(&(z - grad * eta)))
}

fn full_gradient(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
) -> Result<DVector<f64>> {
    let mut grad = data_gradient(model, y, u, z);
    match reg.kind {
        RegularizerKind::Zero => reg.check_domain(z)?,
        _ => grad += reg.gradient(z)?,
    }
    Ok(grad)
}

/// The proximal-gradient map at a fixed step size.
pub(crate) fn ista_map(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    eta: f64,
) -> Result<DVector<f64>> {
    let grad = data_gradient(model, y, u, z);
    reg.prox(&(z - grad * eta), eta)
}

/// `P(z − η(A_uᵀ(A_u z − y) + ∇R(z)))`.
pub fn pgd_step(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    ls: &LinesearchConfig,
) -> Result<ScaleStep> {
    check(z, u, model, y)?;
    ls.validate()?;
    let grad = full_gradient(z, u, model, y, reg)?;
    let step_at = |eta: f64| reg.project(&(z - &grad * eta));
    match ls.step {
        ZStepSize::Fixed(eta) => {
            let next = step_at(eta);
            let (lo, hi) = bounds(z, &next);
            let l = data_lipschitz(model, u) + reg.curvature_bound(lo, hi);
            Ok(ScaleStep {
                z: next,
                eta,
                halvings: 0,
                decrease_const: 1.0 / eta - l / 2.0,
                lipschitz: Some(l),
            })
        }
        ZStepSize::Auto => {
            let (lo, hi) = (0.5 * z.min(), 2.0 * z.max() + 1.0);
            let l = data_lipschitz(model, u) + reg.curvature_bound(lo, hi);
            let eta = if l > 0.0 { 1.0 / l } else { ls.eta_init };
            let next = step_at(eta);
            Ok(ScaleStep {
                z: next,
                eta,
                halvings: 0,
                decrease_const: 1.0 / eta - l / 2.0,
                lipschitz: Some(l),
            })
        }
        ZStepSize::Backtracking => {
            let resid = model.mul(&u.component_mul(z)) - y;
            let mut eta = ls.eta_init;
            for halvings in 0..=ls.max_halvings {
                let next = step_at(eta);
                let change = data_change(model, u, &resid, &(&next - z)) + reg.value_change(z, &next)?;
                let lin = grad.dot(&(z - &next));
                if change <= -ls.alpha * lin {
                    return Ok(ScaleStep {
                        z: next,
                        eta,
                        halvings,
                        decrease_const: ls.alpha,
                        lipschitz: None,
                    });
                }
                eta *= ls.shrink;
            }
            Err(Error::LinesearchFailure(ls.max_halvings))
        }
    }
}

/// `prox_{ηR}(z − η A_uᵀ(A_u z − y))`.
pub fn ista_step(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    ls: &LinesearchConfig,
) -> Result<ScaleStep> {
    check(z, u, model, y)?;
    ls.validate()?;
    reg.check_domain(z)?;
    let grad = data_gradient(model, y, u, z);
    let step_at = |eta: f64| reg.prox(&(z - &grad * eta), eta);
    let rho = reg.weak_convexity();
    match ls.step {
        ZStepSize::Fixed(eta) => {
            let l = data_lipschitz(model, u) + rho;
            Ok(ScaleStep {
                z: step_at(eta)?,
                eta,
                halvings: 0,
                decrease_const: (1.0 / (2.0 * eta)).min(1.0 / eta - l / 2.0),
                lipschitz: Some(l),
            })
        }
        ZStepSize::Auto => {
            let l = data_lipschitz(model, u) + rho;
            let eta = if l > 0.0 { 1.0 / l } else { ls.eta_init };
            Ok(ScaleStep {
                z: step_at(eta)?,
                eta,
                halvings: 0,
                decrease_const: 1.0 / (2.0 * eta),
                lipschitz: Some(l),
            })
        }
        ZStepSize::Backtracking => {
            let mut eta = ls.eta_init;
            for halvings in 0..=ls.max_halvings {
                let next = step_at(eta)?;
                let diff = &next - z;
                // Quadratic upper bound on f, with the linear terms cancelled.
                if eta * model.mul(&u.component_mul(&diff)).norm_squared() <= diff.norm_squared() {
                    return Ok(ScaleStep {
                        z: next,
                        eta,
                        halvings,
                        decrease_const: 1.0 / (2.0 * eta) - rho / 2.0,
                        lipschitz: None,
                    });
                }
                eta *= ls.shrink;
            }
            Err(Error::LinesearchFailure(ls.max_halvings))
        }
    }
}

pub fn scale_step(
    method: ZStepMethod,
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    ls: &LinesearchConfig,
) -> Result<ScaleStep> {
    match method {
        ZStepMethod::Pgd => pgd_step(z, u, model, y, reg, ls),
        ZStepMethod::Ista => ista_step(z, u, model, y, reg, ls),
    }
}

/// Fixed-point residual of the scale update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    /// `‖z − step(z)‖∞`.
    pub abs: f64,
    /// `abs / ‖z‖∞` (equal to `abs` when `z = 0`).
    pub rel: f64,
}

pub fn stationarity_residual(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    reg: &ScaleRegularizer,
    method: ZStepMethod,
    eta_probe: f64,
) -> Result<Stationarity> {
    check(z, u, model, y)?;
    if !(eta_probe > 0.0) {
        return Err(Error::InvalidConfig("stationarity probe step must be positive".into()));
    }
    let next = match method {
        ZStepMethod::Pgd => pgd_map(z, u, model, y, reg, eta_probe)?,
        ZStepMethod::Ista => ista_map(z, u, model, y, reg, eta_probe)?,
    };
    let abs = (z - next).amax();
    let scale = z.amax();
    Ok(Stationarity {
        abs,
        rel: if scale > 0.0 { abs / scale } else { abs },
    })
}
