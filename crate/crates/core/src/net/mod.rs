//! Unrolled, trainable version of the alternating solver.
//!
//! The network runs `K` rounds of `J` learned scale updates followed by a
//! Tikhonov block sharing one learned covariance, multiplies the two factors,
//! and optionally applies one more learned update to the product.

mod conv;
mod forward;
mod params;
mod train;

pub use conv::{Subnet, SubnetCache};
pub use forward::{backward, forward, intermediate_map, predict, GTape, Tape, UTape};
pub use params::{BlockParams, NetParams};
pub use train::{
    adam_step, dataset_mae, mae, train, AdamState, EpochRecord, Sample, TrainConfig, TrainResult,
};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tikhonov::{CovarianceKind, StepRule};

/// Which scale update the learned blocks stand in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `ReLU(r(z) + W(z))`: the subnet plays the role of a gradient.
    Pgd,
    /// `ReLU(r(z) + W(r(z)))`: the subnet plays the role of a prox.
    Ista,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pgd => "pgd",
            Variant::Ista => "ista",
        }
    }
}

/// How each Tikhonov block is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UMode {
    Exact,
    /// Accelerated gradient; the step size is held constant when
    /// differentiating, even when it was estimated from the input.
    Nagd { steps: usize, eta: StepRule },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Rounds `K`.
    pub outer_iters: usize,
    /// Learned scale updates per round `J`.
    pub inner_iters: usize,
    /// Odd square kernel size shared by every layer.
    pub kernel: usize,
    /// Output channels `f_1, …, f_D`; the last must be 1.
    pub channels: Vec<usize>,
    pub variant: Variant,
    pub cov_kind: CovarianceKind,
    /// Diagonal value of the initial covariance.
    pub cov_init: f64,
    /// Floor added to the covariance.
    pub eps: f64,
    /// Upper bound on the length of the data-fit gradient step.
    pub gamma_max: f64,
    /// Upper clamp of the initial scale estimate.
    pub init_bound: f64,
    pub u_mode: UMode,
    pub refine: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        let mut channels = alloc::vec![32; 7];
        channels.push(1);
        NetConfig {
            outer_iters: 3,
            inner_iters: 4,
            kernel: 3,
            channels,
            variant: Variant::Ista,
            cov_kind: CovarianceKind::ScaledIdentity,
            cov_init: 0.1,
            eps: 1e-4,
            gamma_max: 1.0,
            init_bound: 10.0,
            u_mode: UMode::Exact,
            refine: true,
        }
    }
}

impl NetConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    /// Number of learned scale-update blocks, including the refinement slot.
    pub fn block_count(&self) -> usize {
        self.outer_iters * self.inner_iters + 1
    }

    /// Weights in one subnet: `Σ f_{d−1} f_d k²` with `f_0 = 1`.
    pub fn subnet_weights(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut prev = 1;
        let mut total = 0;
        for &f in &self.channels {
            total += prev * f * k2;
            prev = f;
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return bad(format!(
                "network needs K >= 1 and J >= 1, got K={} J={}",
                self.outer_iters, self.inner_iters
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return bad("channel list must be nonempty with positive entries".into());
        }
        if *self.channels.last().unwrap() != 1 {
            return bad("last channel count must be 1".into());
        }
        if !(self.gamma_max > 0.0) {
            return bad(format!("gamma_max must be positive, got {}", self.gamma_max));
        }
        if !(self.eps > 0.0) || !(self.cov_init > 0.0) {
            return bad("covariance floor and initial value must be positive".into());
        }
        if !(self.init_bound > 0.0) {
            return bad("initial scale bound must be positive".into());
        }
        if let UMode::Nagd { steps, eta } = self.u_mode {
            if steps == 0 {
                return bad("NAGD needs at least one step".into());
            }
            if let StepRule::Fixed(e) = eta {
                if !(e > 0.0) {
                    return bad("NAGD step must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Total trainable scalars for signals of length `n`:
/// `dim(P) + (KJ + 1)(p + 1)`.
pub fn param_count(cfg: &NetConfig, n: usize) -> usize {
    cfg.cov_kind.dim(n) + cfg.block_count() * (cfg.subnet_weights() + 1)
}
