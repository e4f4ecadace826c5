//! Forward evaluation with a tape, and the matching reverse pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::conv::{Subnet, SubnetCache};
use super::params::{BlockParams, NetParams};
use super::{NetConfig, UMode, Variant};
use crate::error::{check_len, Error, Result};
use crate::gcgls::initial_scale;
use crate::linalg::floor_at;
use crate::sensing::SensingModel;
use crate::tikhonov::{momentum, solve_routed, Covariance, LinOps, TikhonovSolution};

/// Everything one learned scale update needs for its reverse pass.
#[derive(Debug, Clone)]
pub struct GTape {
    pub z_in: DVector<f64>,
    pub u: DVector<f64>,
    /// `Aᵀ(A(u⊙z) − y)`.
    pub back_resid: DVector<f64>,
    /// `u ⊙ back_resid`.
    pub grad: DVector<f64>,
    pub grad_norm: f64,
    /// `min(1, γ_max/‖grad‖)`.
    pub scale: f64,
    pub clipped: bool,
    pub eta: f64,
    pub r: DVector<f64>,
    pub cache: SubnetCache,
    /// Argument of the outer ReLU.
    pub pre: DVector<f64>,
    pub out: DVector<f64>,
}

/// Tape of one Tikhonov block.
#[derive(Debug, Clone)]
pub enum UTape {
    Exact {
        z: DVector<f64>,
        solution: TikhonovSolution,
    },
    Nagd {
        z: DVector<f64>,
        /// Warm start followed by every accelerated iterate.
        iterates: Vec<DVector<f64>>,
        eta: f64,
    },
}

impl UTape {
    pub fn z(&self) -> &DVector<f64> {
        match self {
            UTape::Exact { z, .. } | UTape::Nagd { z, .. } => z,
        }
    }

    pub fn u(&self) -> &DVector<f64> {
        match self {
            UTape::Exact { solution, .. } => &solution.u,
            UTape::Nagd { iterates, .. } => iterates.last().expect("at least the warm start"),
        }
    }
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape<'a> {
    model: &'a SensingModel,
    y: &'a DVector<f64>,
    params: &'a NetParams,
    cfg: &'a NetConfig,
    cov: Covariance,
    pub z0: DVector<f64>,
    /// `U_0, …, U_K`.
    pub u_states: Vec<UTape>,
    /// Learned scale updates in order `(k, j)`.
    pub g_states: Vec<GTape>,
    pub refine: Option<GTape>,
    /// `U_K ⊙ Z_K`.
    pub product: DVector<f64>,
    pub output: DVector<f64>,
}

fn side_of(model: &SensingModel) -> Result<usize> {
    model
        .side()
        .ok_or_else(|| Error::InvalidDimension(format!("network needs a square image, n = {}", model.n())))
}

/// One learned scale update `g(z, u)`.
pub fn intermediate_map(
    z: &DVector<f64>,
    u: &DVector<f64>,
    model: &SensingModel,
    y: &DVector<f64>,
    block: &BlockParams,
    cfg: &NetConfig,
) -> Result<(DVector<f64>, GTape)> {
    let side = side_of(model)?;
    check_len("scale vector", model.n(), z.len())?;
    check_len("gaussian vector", model.n(), u.len())?;
    let resid = model.mul(&u.component_mul(z)) - y;
    let back_resid = model.tr_mul(&resid);
    let grad = u.component_mul(&back_resid);
    let grad_norm = grad.norm();
    let ratio = cfg.gamma_max / grad_norm;
    let clipped = ratio < 1.0;
    let scale = if clipped { ratio } else { 1.0 };
    let eta = block.delta * scale;
    let r = z - &grad * eta;
    let net = Subnet {
        side,
        kernel: cfg.kernel,
        channels: &cfg.channels,
        layers: &block.layers,
    };
    let (w, cache) = match cfg.variant {
        Variant::Pgd => net.forward(z.as_slice())?,
        Variant::Ista => net.forward(r.as_slice())?,
    };
    let pre = &r + DVector::from_vec(w);
    let out = pre.map(|v| floor_at(v, 0.0));
    Ok((
        out.clone(),
        GTape {
            z_in: z.clone(),
            u: u.clone(),
            back_resid,
            grad,
            grad_norm,
            scale,
            clipped,
            eta,
            r,
            cache,
            pre,
            out,
        },
    ))
}

fn tikhonov_block(
    mode: &UMode,
    u_prev: &DVector<f64>,
    z: &DVector<f64>,
    model: &SensingModel,
    a: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    cov: &Covariance,
) -> Result<UTape> {
    match mode {
        UMode::Exact => Ok(UTape::Exact {
            z: z.clone(),
            solution: solve_routed(z, a, y, cov)?,
        }),
        UMode::Nagd { steps, eta } => {
            let ops = LinOps::new(model, y);
            let eta = ops.nagd_eta(z, cov, *eta)?;
            let mut iterates = Vec::with_capacity(steps + 1);
            iterates.push(u_prev.clone());
            ops.nagd(u_prev, z, cov, eta, *steps, 0, |_, u| iterates.push(u.clone()))?;
            Ok(UTape::Nagd {
                z: z.clone(),
                iterates,
                eta,
            })
        }
    }
}

/// Runs the network on `y`, recording what the reverse pass needs.
pub fn forward<'a>(
    y: &'a DVector<f64>,
    model: &'a SensingModel,
    params: &'a NetParams,
    cfg: &'a NetConfig,
) -> Result<Tape<'a>> {
    cfg.validate()?;
    let n = model.n();
    side_of(model)?;
    params.check_shapes(cfg, n)?;
    check_len("measurement vector", model.m(), y.len())?;
    let cov = params.cov.materialize()?;
    let a = model.a_dense();

    let z0 = initial_scale(model, y, cfg.init_bound)?;
    let mut u_states = Vec::with_capacity(cfg.outer_iters + 1);
    u_states.push(tikhonov_block(&cfg.u_mode, &DVector::zeros(n), &z0, model, &a, y, &cov)?);
    let mut g_states = Vec::with_capacity(cfg.outer_iters * cfg.inner_iters);
    let mut z = z0.clone();
    for k in 0..cfg.outer_iters {
        let u = u_states[k].u().clone();
        for j in 0..cfg.inner_iters {
            let block = &params.blocks[k * cfg.inner_iters + j];
            let (next, tape) = intermediate_map(&z, &u, model, y, block, cfg)?;
            g_states.push(tape);
            z = next;
        }
        u_states.push(tikhonov_block(&cfg.u_mode, &u, &z, model, &a, y, &cov)?);
    }
    let product = z.component_mul(u_states[cfg.outer_iters].u());
    let (output, refine) = if cfg.refine {
        let ones = DVector::from_element(n, 1.0);
        let block = &params.blocks[cfg.outer_iters * cfg.inner_iters];
        let (out, tape) = intermediate_map(&product, &ones, model, y, block, cfg)?;
        (out, Some(tape))
    } else {
        (product.clone(), None)
    };
    Ok(Tape {
        model,
        y,
        params,
        cfg,
        cov,
        z0,
        u_states,
        g_states,
        refine,
        product,
        output,
    })
}

/// Network output only.
pub fn predict(y: &DVector<f64>, model: &SensingModel, params: &NetParams, cfg: &NetConfig) -> Result<DVector<f64>> {
    Ok(forward(y, model, params, cfg)?.output)
}

/// `Aᵀ A x`.
fn gram(model: &SensingModel, x: &DVector<f64>) -> DVector<f64> {
    model.tr_mul(&model.mul(x))
}

/// Reverse pass through one learned scale update. Returns the gradients
/// with respect to `z` and `u`.
fn g_backward(
    t: &GTape,
    obar: &DVector<f64>,
    block: &BlockParams,
    gblock: &mut BlockParams,
    cfg: &NetConfig,
    model: &SensingModel,
    side: usize,
) -> (DVector<f64>, DVector<f64>) {
    let pbar = DVector::from_fn(obar.len(), |i, _| if t.pre[i] > 0.0 { obar[i] } else { 0.0 });
    let net = Subnet {
        side,
        kernel: cfg.kernel,
        channels: &cfg.channels,
        layers: &block.layers,
    };
    let through = DVector::from_vec(net.backward(&t.cache, pbar.as_slice(), &mut gblock.layers));
    let (rbar, mut zbar) = match cfg.variant {
        Variant::Pgd => (pbar.clone(), pbar + through),
        Variant::Ista => {
            let rbar = pbar + through;
            (rbar.clone(), rbar)
        }
    };
    let mut gradbar = &rbar * (-t.eta);
    let etabar = -rbar.dot(&t.grad);
    gblock.delta += etabar * t.scale;
    if t.clipped {
        let sbar = etabar * block.delta;
        let gnbar = -sbar * cfg.gamma_max / (t.grad_norm * t.grad_norm);
        gradbar += &t.grad * (gnbar / t.grad_norm);
    }
    let aq = gram(model, &t.u.component_mul(&gradbar));
    zbar += t.u.component_mul(&aq);
    let ubar = gradbar.component_mul(&t.back_resid) + t.z_in.component_mul(&aq);
    (zbar, ubar)
}

/// Reverse pass through one Tikhonov block. Returns the gradient with respect
/// to `z` and to the warm start, and accumulates the covariance gradient.
fn u_backward(
    t: &UTape,
    ubar: &DVector<f64>,
    tape: &Tape<'_>,
    aty: &DVector<f64>,
    cov_grad: &mut [f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let model = tape.model;
    let cov = &tape.cov;
    let pcov = &tape.params.cov;
    let n = ubar.len();
    match t {
        UTape::Exact { z, solution } => {
            let u = &solution.u;
            let w = solution.solve_hessian(ubar);
            let fit = model.tr_mul(&(tape.y - model.mul(&z.component_mul(u))));
            let gw = gram(model, &z.component_mul(&w));
            let zbar = w.component_mul(&fit) - u.component_mul(&gw);
            pcov.accumulate_bilinear_grad(&cov.apply_inv(&w), &cov.apply_inv(u), 1.0, cov_grad)?;
            Ok((zbar, DVector::zeros(n)))
        }
        UTape::Nagd { z, iterates, eta } => {
            let steps = iterates.len() - 1;
            let eta = *eta;
            let mut ub: Vec<DVector<f64>> = vec![DVector::zeros(n); steps + 1];
            ub[steps] = ubar.clone();
            let mut zbar = DVector::zeros(n);
            for j in (1..=steps).rev() {
                let g = core::mem::replace(&mut ub[j], DVector::zeros(0));
                let beta = momentum(j);
                let v = if j == 1 {
                    iterates[0].clone()
                } else {
                    &iterates[j - 1] * (1.0 + beta) - &iterates[j - 2] * beta
                };
                let gz = gram(model, &z.component_mul(&g));
                let pg = cov.apply_inv(&g);
                let jr = &g - (z.component_mul(&gz) + &pg) * eta;
                if j == 1 {
                    ub[0] += jr;
                } else {
                    ub[j - 1] += &jr * (1.0 + beta);
                    ub[j - 2] -= &jr * beta;
                }
                let gv = gram(model, &z.component_mul(&v));
                zbar -= (g.component_mul(&gv) + v.component_mul(&gz)) * eta;
                zbar += g.component_mul(aty) * eta;
                pcov.accumulate_bilinear_grad(&pg, &cov.apply_inv(&v), eta, cov_grad)?;
            }
            let warm = core::mem::replace(&mut ub[0], DVector::zeros(0));
            Ok((zbar, warm))
        }
    }
}

/// Gradient of `⟨grad_out, output⟩` with respect to every parameter.
pub fn backward(tape: &Tape<'_>, grad_out: &DVector<f64>) -> Result<NetParams> {
    let cfg = tape.cfg;
    let model = tape.model;
    let params = tape.params;
    let n = model.n();
    if grad_out.len() != n {
        return Err(Error::TapeMismatch(format!(
            "upstream gradient has length {}, network output has {n}",
            grad_out.len()
        )));
    }
    if tape.u_states.len() != cfg.outer_iters + 1
        || tape.g_states.len() != cfg.outer_iters * cfg.inner_iters
        || tape.refine.is_some() != cfg.refine
    {
        return Err(Error::TapeMismatch("tape layout does not match configuration".into()));
    }
    let side = side_of(model)?;
    let mut grads = params.zeros_like();
    let mut cov_grad = vec![0.0; params.cov.dim()];
    let aty = model.tr_mul(tape.y);
    let kj = cfg.outer_iters * cfg.inner_iters;

    let cbar = match &tape.refine {
        Some(t) => g_backward(t, grad_out, &params.blocks[kj], &mut grads.blocks[kj], cfg, model, side).0,
        None => grad_out.clone(),
    };
    let last = &tape.u_states[cfg.outer_iters];
    let mut ubar: Vec<DVector<f64>> = vec![DVector::zeros(n); cfg.outer_iters + 1];
    ubar[cfg.outer_iters] = cbar.component_mul(last.z());
    let mut zbar = cbar.component_mul(last.u());
    for k in (1..=cfg.outer_iters).rev() {
        let ub = core::mem::replace(&mut ubar[k], DVector::zeros(0));
        let (zb, warm) = u_backward(&tape.u_states[k], &ub, tape, &aty, &mut cov_grad)?;
        zbar += zb;
        ubar[k - 1] += warm;
        for j in (0..cfg.inner_iters).rev() {
            let idx = (k - 1) * cfg.inner_iters + j;
            let (zb, ub) = g_backward(
                &tape.g_states[idx],
                &zbar,
                &params.blocks[idx],
                &mut grads.blocks[idx],
                cfg,
                model,
                side,
            );
            zbar = zb;
            ubar[k - 1] += ub;
        }
    }
    let ub0 = core::mem::replace(&mut ubar[0], DVector::zeros(0));
    u_backward(&tape.u_states[0], &ub0, tape, &aty, &mut cov_grad)?;
    grads.cov.set_flat(&cov_grad)?;
    Ok(grads)
}
