//! Alternating minimisation of the compound Gaussian least-squares cost.
//!
//! Each outer iteration takes `J` descent steps in the scale `z` and then
//! one update of the Gaussian variable `u` (closed form or accelerated
//! gradient). Every block's cost is recorded so the descent guarantees can be
//! audited after the run.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::linalg::floor_at;
use crate::regularizer::{cost, ScaleRegularizer};
use crate::scale_step::{
    data_lipschitz, scale_step, stationarity_residual, LinesearchConfig, Stationarity, ZStepMethod,
};
use crate::sensing::SensingModel;
use crate::tikhonov::{solve_routed, Covariance, CovarianceParam, LinOps, NagdConfig};

/// How the `u` block is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TikhonovMode {
    Exact,
    Nagd(NagdConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer iterations `K`.
    pub outer_iters: usize,
    /// Scale steps per outer iteration `J`.
    pub inner_iters: usize,
    /// Upper clamp for the initial scale estimate.
    pub init_bound: f64,
    pub tikhonov: TikhonovMode,
    pub method: ZStepMethod,
    pub linesearch: LinesearchConfig,
    /// Stop once `‖(Δu, Δz)‖` over an outer iteration falls below this.
    pub stop_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            outer_iters: 50,
            inner_iters: 4,
            init_bound: 10.0,
            tikhonov: TikhonovMode::Exact,
            method: ZStepMethod::Ista,
            linesearch: LinesearchConfig::default(),
            stop_tol: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidConfig("solver needs K >= 1 and J >= 1".into()));
        }
        if !(self.init_bound > 0.0) {
            return Err(Error::InvalidConfig("initial scale bound must be positive".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop tolerance must be nonnegative".into()));
        }
        if let TikhonovMode::Nagd(n) = self.tikhonov {
            if n.steps == 0 {
                return Err(Error::InvalidConfig("NAGD needs at least one step".into()));
            }
        }
        self.linesearch.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Init,
    Scale,
    Gaussian,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Init => "init",
            Block::Scale => "z",
            Block::Gaussian => "u",
        }
    }
}

/// Cost after one block of the alternating scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Outer iteration, 0 for the initial point.
    pub iter: usize,
    /// Inner scale step within the outer iteration (0 for `u` and init rows).
    pub inner: usize,
    pub block: Block,
    pub cost: f64,
    /// Norm of the change made by this block.
    pub step_norm: f64,
    /// Step size used (NaN when the block has none).
    pub eta: f64,
    /// Guaranteed decrease constant for scale steps, NaN otherwise.
    pub decrease_const: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgState {
    pub u: DVector<f64>,
    pub z: DVector<f64>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalStationarity {
    /// `‖∇_u F(u, z)‖₂`.
    pub u_grad_norm: f64,
    pub z_residual: Stationarity,
    /// Step size at which the scale residual was probed.
    pub eta_probe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `z ⊙ u` at the final iterate.
    pub c_star: DVector<f64>,
    pub state: CgState,
    pub converged: bool,
    pub interrupted: bool,
    pub stationarity: FinalStationarity,
    pub outer_iterations: usize,
    /// Initial scale entries raised to the regularizer's domain floor.
    pub lifted_zeros: usize,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        self.state.trace.last().map_or(f64::NAN, |r| r.cost)
    }
}

/// `clamp(Aᵀy / ‖A‖₂, 0, b)`.
pub fn initial_scale(model: &SensingModel, y: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
    let norm = model.a_norm();
    let back = model.adjoint(y)?;
    let scaled = if norm > 0.0 { back / norm } else { back };
    Ok(scaled.map(|x| if x > bound { bound } else { floor_at(x, 0.0) }))
}

/// Solves the `u` block, warm-starting the accelerated variant from `u_prev`.
pub(crate) fn gaussian_update(
    mode: &TikhonovMode,
    u_prev: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    check_divergence: bool,
) -> Result<(DVector<f64>, f64)> {
    match mode {
        TikhonovMode::Exact => Ok((solve_routed(z, &model.a_dense(), y, cov)?.u, f64::NAN)),
        TikhonovMode::Nagd(cfg) => {
            let ops = LinOps::new(model, y);
            let eta = ops.nagd_eta(z, cov, cfg.eta)?;
            let window = if check_divergence { cfg.divergence_window } else { 0 };
            let u = ops.nagd(u_prev, z, cov, eta, cfg.steps, window, |_, _| {})?;
            Ok((u, eta))
        }
    }
}

fn guard(prev: f64, next: f64, iter: usize) -> Result<()> {
    let slack = 1e-10 * prev.abs().max(1.0);
    if next > prev + slack {
        Err(Error::NonMonotoneCost {
            iter,
            increase: next - prev,
        })
    } else {
        Ok(())
    }
}

/// Runs the alternating scheme for the configured number of iterations.
pub fn solve(
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &CovarianceParam,
    reg: &ScaleRegularizer,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_with_interrupt(model, y, cov, reg, cfg, &mut |_| false)
}

/// As [`solve`], polling `interrupt(k)` after each outer iteration `k` and
/// stopping early when it returns `true`.
pub fn solve_with_interrupt(
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &CovarianceParam,
    reg: &ScaleRegularizer,
    cfg: &SolverConfig,
    interrupt: &mut dyn FnMut(usize) -> bool,
) -> Result<SolveReport> {
    cfg.validate()?;
    check_len("measurement vector", model.m(), y.len())?;
    check_len("covariance", model.n(), cov.n())?;
    let cov = cov.materialize()?;
    let n = model.n();

    let mut z = initial_scale(model, y, cfg.init_bound)?;
    let mut lifted_zeros = 0;
    if reg.requires_open_domain() {
        for v in z.iter_mut() {
            if *v < reg.domain_floor {
                *v = reg.domain_floor;
                lifted_zeros += 1;
            }
        }
    }
    let (mut u, _) = gaussian_update(&cfg.tikhonov, &DVector::zeros(n), &z, model, y, &cov, true)?;
    let mut f = cost(&u, &z, model, y, &cov, reg)?;
    let mut trace = Vec::with_capacity(1 + cfg.outer_iters * (cfg.inner_iters + 1));
    trace.push(TraceRecord {
        iter: 0,
        inner: 0,
        block: Block::Init,
        cost: f,
        step_norm: 0.0,
        eta: f64::NAN,
        decrease_const: f64::NAN,
    });

    let mut converged = false;
    let mut interrupted = false;
    let mut last_eta = f64::NAN;
    let mut outer = 0;
    for k in 1..=cfg.outer_iters {
        outer = k;
        let z_start = z.clone();
        for j in 1..=cfg.inner_iters {
            let step = scale_step(cfg.method, &z, &u, model, y, reg, &cfg.linesearch)?;
            let next_f = cost(&u, &step.z, model, y, &cov, reg)?;
            guard(f, next_f, k)?;
            trace.push(TraceRecord {
                iter: k,
                inner: j,
                block: Block::Scale,
                cost: next_f,
                step_norm: (&step.z - &z).norm(),
                eta: step.eta,
                decrease_const: step.decrease_const,
            });
            last_eta = step.eta;
            z = step.z;
            f = next_f;
        }
        let (next_u, eta_u) = gaussian_update(&cfg.tikhonov, &u, &z, model, y, &cov, true)?;
        let next_f = cost(&next_u, &z, model, y, &cov, reg)?;
        guard(f, next_f, k)?;
        let du = (&next_u - &u).norm();
        trace.push(TraceRecord {
            iter: k,
            inner: 0,
            block: Block::Gaussian,
            cost: next_f,
            step_norm: du,
            eta: eta_u,
            decrease_const: f64::NAN,
        });
        u = next_u;
        f = next_f;
        let dz = (&z - &z_start).norm();
        if libm::sqrt(du * du + dz * dz) <= cfg.stop_tol {
            converged = true;
            break;
        }
        if interrupt(k) {
            interrupted = true;
            break;
        }
    }

    let ops = LinOps::new(model, y);
    let u_grad_norm = ops.grad_u(&u, &z, &cov).norm();
    let l = data_lipschitz(model, &u) + reg.weak_convexity();
    let eta_probe = if l > 0.0 { 1.0 / l } else { last_eta };
    let z_residual = stationarity_residual(&z, &u, model, y, reg, cfg.method, eta_probe)?;
    Ok(SolveReport {
        c_star: z.component_mul(&u),
        state: CgState { u, z, trace },
        converged,
        interrupted,
        stationarity: FinalStationarity {
            u_grad_norm,
            z_residual,
            eta_probe,
        },
        outer_iterations: outer,
        lifted_zeros,
    })
}

/// Post-run audit of the descent guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `F_before − F_after − c‖Δz‖²` for every scale step, in order.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub u_grad_norm: f64,
    pub z_residual: f64,
    pub z_residual_rel: f64,
    /// `Σ c‖Δz‖²` over all scale steps.
    pub telescoping_lhs: f64,
    /// `F(u₀, z₀) − F_final`.
    pub telescoping_rhs: f64,
    pub telescoping_holds: bool,
    pub z_step_count: usize,
}

pub fn diagnostics(report: &SolveReport) -> Diagnostics {
    let trace = &report.state.trace;
    let mut margins = Vec::new();
    let mut lhs = 0.0;
    for w in trace.windows(2) {
        if w[1].block == Block::Scale {
            let c = w[1].decrease_const;
            let d2 = w[1].step_norm * w[1].step_norm;
            margins.push(w[0].cost - w[1].cost - c * d2);
            lhs += c * d2;
        }
    }
    let f0 = trace.first().map_or(0.0, |r| r.cost);
    let rhs = f0 - report.final_cost();
    let slack = 1e-10 * f0.abs().max(1.0);
    Diagnostics {
        min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        z_step_count: margins.len(),
        margins,
        u_grad_norm: report.stationarity.u_grad_norm,
        z_residual: report.stationarity.z_residual.abs,
        z_residual_rel: report.stationarity.z_residual.rel,
        telescoping_lhs: lhs,
        telescoping_rhs: rhs,
        telescoping_holds: lhs <= rhs + slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::DMatrix;

    #[test]
    fn zero_measurement_gives_zero_reconstruction() {
        let a = DMatrix::from_fn(4, 6, |r, c| libm::sin((r * 6 + c) as f64));
        let model = SensingModel::from_dense(a).unwrap();
        let cov = CovarianceParam::scaled_identity(6, 1.0, 1e-4);
        let cfg = SolverConfig {
            outer_iters: 3,
            ..Default::default()
        };
        let rep = solve(&model, &DVector::zeros(4), &cov, &ScaleRegularizer::zero(), &cfg).unwrap();
        assert_eq!(rep.c_star.amax(), 0.0);
        // Already a fixed point, so the first outer iteration stops the run.
        assert!(rep.converged);
        assert_eq!(rep.state.trace.len(), 1 + 5);
    }

    #[test]
    fn single_outer_iteration_has_j_scale_records() {
        let a = DMatrix::from_fn(3, 4, |r, c| libm::cos((r + 3 * c) as f64));
        let model = SensingModel::from_dense(a).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.5, -0.3]);
        let cov = CovarianceParam::scaled_identity(4, 1.0, 1e-4);
        let cfg = SolverConfig {
            outer_iters: 1,
            inner_iters: 3,
            ..Default::default()
        };
        let rep = solve(&model, &y, &cov, &ScaleRegularizer::log_squared(0.5), &cfg).unwrap();
        let d = diagnostics(&rep);
        assert_eq!(d.z_step_count, 3);
        assert!(d.telescoping_holds);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            inner_iters: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
