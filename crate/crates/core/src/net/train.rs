//! Mean-absolute-error training with Adam.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::forward::{backward, forward};
use super::params::NetParams;
use super::NetConfig;
use crate::error::{check_len, Error, Result};
use crate::sensing::SensingModel;

/// One measurement and its ground-truth signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: DVector<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation MAE.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 100,
            batch: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch == 0 {
            return Err(Error::InvalidConfig("training needs lr >= 0 and batch >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return Err(Error::InvalidConfig("Adam needs beta in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch losses seen during the epoch.
    pub train_mae: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: NetParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    /// MAE of the returned parameters over the whole training set.
    pub final_train_mae: f64,
}

/// `(1/n) ‖x − c‖₁`.
pub fn mae(x: &DVector<f64>, c: &DVector<f64>) -> f64 {
    (x - c).abs().sum() / x.len() as f64
}

/// Mean over samples of the per-sample MAE.
pub fn dataset_mae(samples: &[Sample], model: &SensingModel, params: &NetParams, cfg: &NetConfig) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let tape = forward(&s.y, model, params, cfg)?;
        total += mae(&tape.output, &s.c);
    }
    Ok(total / samples.len() as f64)
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        theta[i] -= cfg.lr * mhat / (libm::sqrt(vhat) + cfg.eps_adam);
    }
}

/// Loss and flat gradient of one batch.
fn batch_gradient(
    batch: &[Sample],
    model: &SensingModel,
    params: &NetParams,
    cfg: &NetConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = model.n() as f64;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for s in batch {
        check_len("target signal", model.n(), s.c.len())?;
        let tape = forward(&s.y, model, params, cfg)?;
        loss += mae(&tape.output, &s.c) * scale;
        let upstream = (&tape.output - &s.c).map(|d| {
            if d > 0.0 {
                scale / n
            } else if d < 0.0 {
                -scale / n
            } else {
                0.0
            }
        });
        let g = backward(&tape, &upstream)?.to_flat();
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((loss, grad))
}

/// Trains from `init` (or a fresh initialisation seeded by `tcfg.seed`).
///
/// Batches are taken in dataset order. With early stopping the parameters of
/// the best validation epoch are returned.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    model: &SensingModel,
    cfg: &NetConfig,
    tcfg: &TrainConfig,
    init: Option<NetParams>,
) -> Result<TrainResult> {
    tcfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientImages {
            needed: 1,
            available: 0,
        });
    }
    let mut params = match init {
        Some(p) => {
            p.check_shapes(cfg, model.n())?;
            p
        }
        None => NetParams::init(cfg, model.n(), tcfg.seed)?,
    };
    let mut theta = params.to_flat();
    let mut adam = AdamState::new(theta.len());
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, NetParams)> = None;
    let mut since_best = 0usize;
    for epoch in 1..=tcfg.epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in train_set.chunks(tcfg.batch).enumerate() {
            let (loss, grad) = batch_gradient(chunk, model, &params, cfg)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            adam_step(&mut theta, &grad, &mut adam, tcfg);
            params.set_flat(&theta)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_mae = epoch_loss / batches as f64;
        let val_mae = if tcfg.early_stop.is_some() && !val_set.is_empty() {
            Some(dataset_mae(val_set, model, &params, cfg)?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            train_mae,
            val_mae,
        });
        if let (Some(patience), Some(v)) = (tcfg.early_stop, val_mae) {
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, history.len()),
    };
    let final_train_mae = dataset_mae(train_set, model, &params, cfg)?;
    Ok(TrainResult {
        params,
        history,
        best_epoch,
        final_train_mae,
    })
}
