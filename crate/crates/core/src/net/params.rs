use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::NetConfig;
use crate::error::{check_len, Error, Result};
use crate::tikhonov::CovarianceParam;

/// Step scalar and subnet kernels of one learned scale update.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub delta: f64,
    /// Kernel of layer `d` in `k×k×f_{d−1}×f_d` order (last index fastest).
    pub layers: Vec<Vec<f64>>,
}

/// Every trainable scalar of the network. Also used as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub cov: CovarianceParam,
    /// Blocks in order `(k, j)` for `k = 1..K`, `j = 1..J`, then refinement.
    pub blocks: Vec<BlockParams>,
}

impl NetParams {
    /// Glorot-uniform kernels, unit step scalars and a diagonal covariance.
    pub fn init(cfg: &NetConfig, n: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = cfg.kernel * cfg.kernel;
        let mut blocks = Vec::with_capacity(cfg.block_count());
        for _ in 0..cfg.block_count() {
            let mut layers = Vec::with_capacity(cfg.depth());
            let mut cin = 1;
            for &cout in &cfg.channels {
                let limit = libm::sqrt(6.0 / ((k2 * cin + k2 * cout) as f64));
                let dist = Uniform::new(-limit, limit).map_err(|_| {
                    Error::InvalidConfig("degenerate Glorot range".into())
                })?;
                layers.push((0..k2 * cin * cout).map(|_| dist.sample(&mut rng)).collect());
                cin = cout;
            }
            blocks.push(BlockParams { delta: 1.0, layers });
        }
        Ok(NetParams {
            cov: CovarianceParam::initial(cfg.cov_kind, n, cfg.cov_init, cfg.eps)?,
            blocks,
        })
    }

    /// Same shapes, every scalar zero (the covariance floor is kept).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        let dim = out.cov.dim();
        out.cov
            .set_flat(&vec![0.0; dim])
            .expect("dimension taken from self");
        for b in &mut out.blocks {
            b.delta = 0.0;
            for l in &mut b.layers {
                l.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.cov.dim()
            + self
                .blocks
                .iter()
                .map(|b| 1 + b.layers.iter().map(Vec::len).sum::<usize>())
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Covariance scalars, then per block `δ` followed by each layer kernel.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.cov.to_flat());
        for b in &self.blocks {
            out.push(b.delta);
            for l in &b.layers {
                out.extend_from_slice(l);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("network parameters", self.len(), flat.len())?;
        let dim = self.cov.dim();
        self.cov.set_flat(&flat[..dim])?;
        let mut at = dim;
        for b in &mut self.blocks {
            b.delta = flat[at];
            at += 1;
            for l in &mut b.layers {
                let len = l.len();
                l.copy_from_slice(&flat[at..at + len]);
                at += len;
            }
        }
        Ok(())
    }

    /// Checks that the shapes agree with `cfg` for signals of length `n`.
    pub fn check_shapes(&self, cfg: &NetConfig, n: usize) -> Result<()> {
        let mismatch = |what: &str| Err(Error::TapeMismatch(alloc::format!("parameter shape: {what}")));
        if self.cov.kind() != cfg.cov_kind || self.cov.n() != n {
            return mismatch("covariance");
        }
        if self.blocks.len() != cfg.block_count() {
            return mismatch("block count");
        }
        let k2 = cfg.kernel * cfg.kernel;
        for b in &self.blocks {
            if b.layers.len() != cfg.depth() {
                return mismatch("subnet depth");
            }
            let mut cin = 1;
            for (l, &cout) in b.layers.iter().zip(&cfg.channels) {
                if l.len() != k2 * cin * cout {
                    return mismatch("kernel size");
                }
                cin = cout;
            }
        }
        Ok(())
    }
}
