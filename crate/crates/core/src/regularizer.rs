//! Scale-variable regularizers, the joint objective and its MAP reading.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::linalg::{floor_at, linspace};
use crate::sensing::SensingModel;
use crate::tikhonov::Covariance;

/// Default lower bound for scale entries when the regularizer lives on `(0, ∞)`.
pub const LOG_DOMAIN_FLOOR: f64 = 1e-8;

const PROX_TOL: f64 = 1e-12;
const PROX_NEWTON_ITERS: usize = 100;
const PROX_BISECT_ITERS: usize = 200;
/// Below this value of `η·μ` the prox objective is strictly convex.
const PROX_CONVEX_LIMIT: f64 = 20.0;
const PROX_SCAN_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerKind {
    /// `μ Σ ln² z_i` on `(0, ∞)ⁿ`.
    LogSquared { mu: f64 },
    /// `R ≡ 0` on `[0, ∞)ⁿ`.
    Zero,
    /// Learned implicitly by a network; has no value, gradient or prox.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRegularizer {
    pub kind: RegularizerKind,
    /// Projection floor. Scale iterates never drop below it.
    pub domain_floor: f64,
}

impl ScaleRegularizer {
    pub fn log_squared(mu: f64) -> Self {
        ScaleRegularizer {
            kind: RegularizerKind::LogSquared { mu },
            domain_floor: LOG_DOMAIN_FLOOR,
        }
    }

    pub fn zero() -> Self {
        ScaleRegularizer {
            kind: RegularizerKind::Zero,
            domain_floor: 0.0,
        }
    }

    pub fn external() -> Self {
        ScaleRegularizer {
            kind: RegularizerKind::External,
            domain_floor: 0.0,
        }
    }

    pub fn requires_open_domain(&self) -> bool {
        matches!(self.kind, RegularizerKind::LogSquared { .. })
    }

    /// Fails with a domain error on the first coordinate outside the domain.
    pub fn check_domain(&self, z: &DVector<f64>) -> Result<()> {
        for (index, &value) in z.iter().enumerate() {
            let ok = if self.requires_open_domain() {
                value > 0.0
            } else {
                value >= 0.0
            };
            if !ok || !value.is_finite() {
                return Err(Error::Domain { index, value });
            }
        }
        Ok(())
    }

    pub fn value(&self, z: &DVector<f64>) -> Result<f64> {
        self.check_domain(z)?;
        match self.kind {
            RegularizerKind::LogSquared { mu } => Ok(mu
                * z.iter()
                    .map(|&zi| {
                        let l = libm::log(zi);
                        l * l
                    })
                    .sum::<f64>()),
            RegularizerKind::Zero => Ok(0.0),
            RegularizerKind::External => Err(Error::Unsupported("learned regularizer value")),
        }
    }

    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_domain(z)?;
        match self.kind {
            RegularizerKind::LogSquared { mu } => {
                Ok(z.map(|zi| 2.0 * mu * libm::log(zi) / zi))
            }
            RegularizerKind::Zero => Ok(DVector::zeros(z.len())),
            RegularizerKind::External => Err(Error::Unsupported("learned regularizer gradient")),
        }
    }

    /// `R(to) − R(from)`, summed entrywise without cancellation.
    pub fn value_change(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<f64> {
        self.check_domain(from)?;
        self.check_domain(to)?;
        match self.kind {
            RegularizerKind::LogSquared { mu } => Ok(mu
                * from
                    .iter()
                    .zip(to.iter())
                    .map(|(&a, &b)| libm::log1p((b - a) / a) * (libm::log(a) + libm::log(b)))
                    .sum::<f64>()),
            RegularizerKind::Zero => Ok(0.0),
            RegularizerKind::External => Err(Error::Unsupported("learned regularizer value")),
        }
    }

    /// `argmin_ζ ½‖ζ − v‖² + η R(ζ)` over `ζ ≥ domain_floor`.
    pub fn prox(&self, v: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
        if !(eta >= 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "prox step must be nonnegative, got {eta}"
            )));
        }
        match self.kind {
            RegularizerKind::LogSquared { mu } => {
                let t = eta * mu;
                Ok(v.map(|vi| prox_log_squared(vi, t, self.domain_floor)))
            }
            RegularizerKind::Zero => Ok(self.project(v)),
            RegularizerKind::External => Err(Error::Unsupported("learned regularizer prox")),
        }
    }

    /// Projection onto `[domain_floor, ∞)ⁿ`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let floor = self.domain_floor;
        v.map(|x| floor_at(x, floor))
    }

    /// Upper bound on `|R''|` for coordinates in `[lo, hi]`.
    pub fn curvature_bound(&self, lo: f64, hi: f64) -> f64 {
        match self.kind {
            RegularizerKind::LogSquared { mu } => {
                let lo = lo.max(self.domain_floor).max(f64::MIN_POSITIVE);
                let hi = hi.max(lo);
                let h2 = |x: f64| libm::fabs(2.0 * mu * (1.0 - libm::log(x)) / (x * x));
                let mut bound = h2(lo).max(h2(hi));
                let trough = libm::exp(1.5);
                if lo < trough && trough < hi {
                    bound = bound.max(h2(trough));
                }
                bound
            }
            _ => 0.0,
        }
    }

    /// Smallest `ρ ≥ 0` such that `R + (ρ/2)‖·‖²` is convex.
    pub fn weak_convexity(&self) -> f64 {
        match self.kind {
            // Minimum of 2μ(1 − ln ζ)/ζ² is at ζ = e^1.5 and equals −μe⁻³.
            RegularizerKind::LogSquared { mu } => mu * libm::exp(-3.0),
            _ => 0.0,
        }
    }
}

fn prox_log_squared(v: f64, t: f64, floor: f64) -> f64 {
    if t == 0.0 {
        return floor_at(v, floor);
    }
    let lo = floor.max(f64::MIN_POSITIVE);
    let hi = v.max(1.0) + 1.0;
    let d = |x: f64| x - v + 2.0 * t * libm::log(x) / x;
    let phi = |x: f64| {
        let l = libm::log(x);
        0.5 * (x - v) * (x - v) + t * l * l
    };
    if t < PROX_CONVEX_LIMIT {
        if d(lo) >= 0.0 {
            return lo;
        }
        return refine_root(lo, hi, v, t);
    }
    // Nonconvex objective: locate every local minimiser and keep the best.
    let mut best = lo;
    let mut best_val = phi(lo);
    let ratio = libm::pow(hi / lo, 1.0 / (PROX_SCAN_POINTS - 1) as f64);
    let mut a = lo;
    let mut da = d(a);
    for k in 1..PROX_SCAN_POINTS {
        let b = if k == PROX_SCAN_POINTS - 1 { hi } else { a * ratio };
        let db = d(b);
        if da < 0.0 && db >= 0.0 {
            let r = refine_root(a, b, v, t);
            let val = phi(r);
            if val < best_val {
                best = r;
                best_val = val;
            }
        }
        a = b;
        da = db;
    }
    best
}

/// Root of `x − v + 2t ln x / x` in `[lo, hi]` given a sign change from
/// negative to positive, by Newton's method kept inside the bracket.
fn refine_root(mut lo: f64, mut hi: f64, v: f64, t: f64) -> f64 {
    let d = |x: f64| x - v + 2.0 * t * libm::log(x) / x;
    let d2 = |x: f64| 1.0 + 2.0 * t * (1.0 - libm::log(x)) / (x * x);
    let mut x = if v > lo && v < hi { v } else { 0.5 * (lo + hi) };
    for it in 0..PROX_NEWTON_ITERS + PROX_BISECT_ITERS {
        let f = d(x);
        if libm::fabs(f) <= PROX_TOL {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let curv = d2(x);
        let newton = x - f / curv;
        x = if it < PROX_NEWTON_ITERS && curv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// `½‖y − A(z⊙u)‖² + ½uᵀP⁻¹u + R(z)`.
pub fn cost(
    u: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    reg: &ScaleRegularizer,
) -> Result<f64> {
    check_len("gaussian vector", model.n(), u.len())?;
    check_len("scale vector", model.n(), z.len())?;
    check_len("measurement vector", model.m(), y.len())?;
    check_len("covariance", model.n(), cov.n())?;
    let r = reg.value(z)?;
    let resid = y - model.apply(&z.component_mul(u))?;
    Ok(0.5 * resid.norm_squared() + 0.5 * u.dot(&cov.apply_inv(u)) + r)
}

/// `A_uᵀ(A_u z − y)` with `A_u = A·Diag(u)`.
pub fn grad_z_datafit(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("gaussian vector", model.n(), u.len())?;
    check_len("scale vector", model.n(), z.len())?;
    let resid = model.apply(&u.component_mul(z))? - y;
    Ok(u.component_mul(&model.adjoint(&resid)?))
}

/// Box over which the MAP grid check searches, per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGrid {
    pub u_range: (f64, f64),
    pub z_range: (f64, f64),
    pub u_points: usize,
    pub z_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub cost_argmin_u: Vec<f64>,
    pub cost_argmin_z: Vec<f64>,
    pub posterior_argmax_u: Vec<f64>,
    pub posterior_argmax_z: Vec<f64>,
    pub min_cost: f64,
    pub max_log_posterior: f64,
    pub agree: bool,
    /// The cost minimiser touches the edge of the grid; refine the box.
    pub on_boundary: bool,
}

/// Exhaustive grid comparison of the cost minimiser with the posterior mode.
///
/// The posterior uses `y | u, z ~ N(A(z⊙u), σ²I)`, `u ~ N(0, σ²P)` and a
/// scale prior with density proportional to `exp(−R(z)/σ²)`.
pub fn map_equivalence_check(
    model: &SensingModel,
    y: &DVector<f64>,
    cov: &Covariance,
    reg: &ScaleRegularizer,
    sigma: f64,
    grid: &MapGrid,
) -> Result<MapReport> {
    let n = model.n();
    let m = model.m();
    if n == 0 || n > 3 {
        return Err(Error::InvalidDimension(alloc::format!(
            "MAP grid check supports 1 <= n <= 3, got {n}"
        )));
    }
    if !(sigma > 0.0) || grid.u_points < 2 || grid.z_points < 2 {
        return Err(Error::InvalidConfig("MAP grid needs sigma > 0 and >= 2 points per axis".into()));
    }
    let us = linspace(grid.u_range.0, grid.u_range.1, grid.u_points);
    let zs = linspace(grid.z_range.0, grid.z_range.1, grid.z_points);
    let a = model.a_dense();
    let p_dense = cov.to_dense();
    let p_inv = cov.inverse_dense();
    let s2 = sigma * sigma;
    let two_pi = 2.0 * core::f64::consts::PI;
    // log det(σ²P) via the eigenvalues of P.
    let log_det = p_dense
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|&ev| libm::log(s2 * ev))
        .sum::<f64>();

    let per_axis = grid.u_points * grid.z_points;
    let total = per_axis.pow(n as u32);
    let mut best_cost = (f64::INFINITY, 0usize);
    let mut best_post = (f64::NEG_INFINITY, 0usize);
    let decode = |mut idx: usize| {
        let mut ui = vec![0usize; n];
        let mut zi = vec![0usize; n];
        for k in 0..n {
            let cell = idx % per_axis;
            idx /= per_axis;
            ui[k] = cell / grid.z_points;
            zi[k] = cell % grid.z_points;
        }
        (ui, zi)
    };
    for idx in 0..total {
        let (ui, zi) = decode(idx);
        let u = DVector::from_fn(n, |k, _| us[ui[k]]);
        let z = DVector::from_fn(n, |k, _| zs[zi[k]]);
        if reg.check_domain(&z).is_err() {
            continue;
        }
        let f = cost(&u, &z, model, y, cov, reg)?;
        if f < best_cost.0 {
            best_cost = (f, idx);
        }

        // Log posterior assembled from the three densities, scalar loops only.
        let mut resid2 = 0.0;
        for r in 0..m {
            let mut pred = 0.0;
            for c in 0..n {
                pred += a[(r, c)] * z[c] * u[c];
            }
            resid2 += (y[r] - pred) * (y[r] - pred);
        }
        let log_lik = -0.5 * m as f64 * libm::log(two_pi * s2) - resid2 / (2.0 * s2);
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += u[i] * p_inv[(i, j)] * u[j];
            }
        }
        let log_prior_u = -0.5 * n as f64 * libm::log(two_pi) - 0.5 * log_det - quad / (2.0 * s2);
        let log_prior_z = match reg.kind {
            RegularizerKind::LogSquared { mu } => {
                -z.iter().map(|&v| mu * libm::log(v) * libm::log(v)).sum::<f64>() / s2
            }
            _ => 0.0,
        };
        let lp = log_lik + log_prior_u + log_prior_z;
        if lp > best_post.0 {
            best_post = (lp, idx);
        }
    }
    if best_cost.0 == f64::INFINITY {
        return Err(Error::InvalidConfig("MAP grid has no point inside the regularizer domain".into()));
    }
    let (cu, cz) = decode(best_cost.1);
    let (pu, pz) = decode(best_post.1);
    let on_boundary = cu
        .iter()
        .any(|&i| i == 0 || i == grid.u_points - 1)
        || cz.iter().any(|&i| i == 0 || i == grid.z_points - 1);
    Ok(MapReport {
        cost_argmin_u: cu.iter().map(|&i| us[i]).collect(),
        cost_argmin_z: cz.iter().map(|&i| zs[i]).collect(),
        posterior_argmax_u: pu.iter().map(|&i| us[i]).collect(),
        posterior_argmax_z: pz.iter().map(|&i| zs[i]).collect(),
        min_cost: best_cost.0,
        max_log_posterior: best_post.0,
        agree: best_cost.1 == best_post.1,
        on_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn log_squared_analytic_values() {
        let r = ScaleRegularizer::log_squared(1.0);
        let z = DVector::from_vec(vec![core::f64::consts::E, 1.0, 1.0]);
        assert!((r.value(&z).unwrap() - 1.0).abs() < 1e-15);
        let g = r.gradient(&z).unwrap();
        assert!((g[0] - 2.0 / core::f64::consts::E).abs() < 1e-15);
        assert_eq!((g[1], g[2]), (0.0, 0.0));
        assert_eq!(r.value(&DVector::from_element(4, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn log_squared_rejects_nonpositive() {
        let r = ScaleRegularizer::log_squared(1.0);
        let z = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(r.value(&z), Err(Error::Domain { index: 1, value: 0.0 }));
    }

    #[test]
    fn prox_fixed_point_at_one() {
        let r = ScaleRegularizer::log_squared(2.0);
        let p = r.prox(&DVector::from_element(3, 1.0), 0.7).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn prox_vanishing_step_is_projection() {
        let r = ScaleRegularizer::log_squared(1.0);
        let v = DVector::from_vec(vec![0.3, 2.0, -1.0]);
        let p = r.prox(&v, 1e-14).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12);
        assert!((p[1] - 2.0).abs() < 1e-12);
        assert!(p[2] <= 1e-6);
        let p0 = r.prox(&v, 0.0).unwrap();
        assert_eq!(p0[2], LOG_DOMAIN_FLOOR);
    }

    #[test]
    fn prox_nonconvex_regime_is_global() {
        // Large ημ: compare against a dense grid.
        let t = 40.0;
        for &v in &[0.5, 5.0, 30.0, 80.0] {
            let p = prox_log_squared(v, t, LOG_DOMAIN_FLOOR);
            let phi = |x: f64| 0.5 * (x - v) * (x - v) + t * libm::log(x) * libm::log(x);
            let mut best = f64::INFINITY;
            let mut x = 1e-3;
            while x < 200.0 {
                best = best.min(phi(x));
                x *= 1.0001;
            }
            assert!(phi(p) <= best + 1e-6, "v={v}: {} vs {best}", phi(p));
        }
    }

    #[test]
    fn curvature_bound_covers_trough() {
        let r = ScaleRegularizer::log_squared(1.0);
        let rho = r.weak_convexity();
        assert!((rho - 0.0497870683678639).abs() < 1e-12);
        assert!(r.curvature_bound(3.0, 6.0) >= rho);
        assert_eq!(ScaleRegularizer::zero().curvature_bound(0.0, 1.0), 0.0);
    }

    #[test]
    fn external_has_no_closed_form() {
        let r = ScaleRegularizer::external();
        assert!(matches!(r.value(&DVector::from_element(1, 1.0)), Err(Error::Unsupported(_))));
    }
}
