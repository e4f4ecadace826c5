//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use cg_invert_core::gcgls::{SolverConfig, TikhonovMode};
use cg_invert_core::net::{NetConfig, TrainConfig, UMode, Variant};
use cg_invert_core::regularizer::ScaleRegularizer;
use cg_invert_core::scale_step::{LinesearchConfig, ZStepMethod, ZStepSize};
use cg_invert_core::sensing::{build_dct, build_gaussian, build_radon, detector_count, SensingModel};
use cg_invert_core::tikhonov::{CovarianceKind, CovarianceParam, NagdConfig, StepRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Every accepted key with its default. `None` marks keys that are either
/// required or fall back to the run seed.
const KEYS: &[(&str, Option<&str>)] = &[
    ("sensing.kind", None),
    ("sensing.side", Some("32")),
    ("sensing.angles", Some("15")),
    ("sensing.m", None),
    ("sensing.seed", None),
    ("sensing.dictionary", Some("identity")),
    ("reg.kind", Some("logsq")),
    ("reg.mu", Some("0.5")),
    ("tikhonov.mode", Some("exact")),
    ("tikhonov.nagd_steps", Some("100")),
    ("tikhonov.eta", Some("auto")),
    ("tikhonov.divergence_window", Some("10")),
    ("tikhonov.eps", Some("1e-4")),
    ("tikhonov.cov_kind", Some("scaled_identity")),
    ("tikhonov.cov_init", Some("1.0")),
    ("zstep.method", Some("ista")),
    ("zstep.linesearch", Some("backtrack")),
    ("zstep.eta", Some("0.1")),
    ("zstep.alpha", Some("0.3")),
    ("zstep.shrink", Some("0.5")),
    ("zstep.eta_init", Some("1.0")),
    ("zstep.max_halvings", Some("50")),
    ("solver.K", Some("50")),
    ("solver.J", Some("4")),
    ("solver.b", Some("10")),
    ("solver.stop_tol", Some("0")),
    ("solver.max_wall", Some("none")),
    ("net.K", Some("3")),
    ("net.J", Some("4")),
    ("net.kernel", Some("3")),
    ("net.channels", Some("32,32,32,32,32,32,32,1")),
    ("net.variant", Some("ista")),
    ("net.cov_kind", Some("scaled_identity")),
    ("net.cov_init", Some("0.1")),
    ("net.eps", Some("1e-4")),
    ("net.gamma_max", Some("1.0")),
    ("net.b", Some("10")),
    ("net.u_mode", Some("exact")),
    ("net.nagd_steps", Some("100")),
    ("net.nagd_eta", Some("auto")),
    ("net.refine", Some("true")),
    ("train.lr", Some("1e-4")),
    ("train.epochs", Some("100")),
    ("train.batch", Some("1")),
    ("train.beta1", Some("0.9")),
    ("train.beta2", Some("0.999")),
    ("train.eps_adam", Some("1e-8")),
    ("train.seed", None),
    ("train.early_stop", Some("50")),
    ("train.val_fraction", Some("0")),
    ("data.n_samples", Some("20")),
    ("data.snr_db", Some("60")),
    ("data.seed", None),
    ("data.images", Some("synthetic")),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Sensing section as recorded in dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub kind: String,
    pub side: usize,
    pub angles: usize,
    pub m: usize,
    pub seed: u64,
    pub dictionary: String,
}

impl SensingSpec {
    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn build(&self) -> Result<SensingModel> {
        let model = match self.kind.as_str() {
            "radon" => build_radon(self.side, self.angles),
            _ => build_gaussian(self.m, self.n(), self.seed),
        }
        .map_err(|e| bad(format!("sensing: {e}")))?;
        match self.dictionary.as_str() {
            "dct" => {
                let phi = build_dct(self.n()).map_err(|e| bad(format!("sensing.dictionary: {e}")))?;
                Ok(model.with_dictionary(phi)?)
            }
            _ => Ok(model),
        }
    }
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub n_samples: usize,
    pub snr_db: f64,
    pub seed: u64,
    /// `None` for synthetic images, otherwise a directory of PGM/CSV files.
    pub images: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    seed: u64,
}

impl RunConfig {
    /// Reads an optional config file, then applies `key=value` overrides in
    /// order. `seed` is used wherever a section seed is not set explicitly.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: u64) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bad(format!("override `{o}` is not `key=value`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs, seed)
    }

    pub fn from_pairs(pairs: Vec<(String, String)>, seed: u64) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            if !is_known(&k) {
                return Err(bad(format!("unknown config key `{k}`")));
            }
            values.insert(k, v);
        }
        Ok(RunConfig { values, seed })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).or_else(|| default_of(key))
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| bad(format!("missing required key `{key}`")))
    }

    fn invalid(key: &str, v: &str, what: &str) -> CliError {
        bad(format!("`{key}` = `{v}` is not {what}"))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let v = self.req(key)?;
        let x = match v {
            "inf" | "+inf" => f64::INFINITY,
            _ => v.parse::<f64>().map_err(|_| Self::invalid(key, v, "a number"))?,
        };
        if x.is_nan() {
            return Err(Self::invalid(key, v, "a number"));
        }
        Ok(x)
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let v = self.req(key)?;
        v.parse().map_err(|_| Self::invalid(key, v, "a nonnegative integer"))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.req(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Self::invalid(key, v, "a boolean")),
        }
    }

    fn choice<'a>(&'a self, key: &str, options: &[&str]) -> Result<&'a str> {
        let v = self.req(key)?;
        if options.contains(&v) {
            Ok(v)
        } else {
            Err(Self::invalid(key, v, &format!("one of {}", options.join("|"))))
        }
    }

    fn seed_of(&self, key: &str) -> Result<u64> {
        match self.values.get(key) {
            Some(v) => v.parse().map_err(|_| Self::invalid(key, v, "a seed")),
            None => Ok(self.seed),
        }
    }

    fn cov_kind(&self, key: &str) -> Result<CovarianceKind> {
        let v = self.req(key)?;
        CovarianceKind::parse(v)
            .ok_or_else(|| Self::invalid(key, v, "one of scaled_identity|diagonal|tridiagonal|full"))
    }

    fn step_rule(&self, key: &str) -> Result<StepRule> {
        match self.req(key)? {
            "auto" => Ok(StepRule::Auto),
            _ => {
                let eta = self.f64(key)?;
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(Self::invalid(key, self.req(key)?, "`auto` or a positive step"));
                }
                Ok(StepRule::Fixed(eta))
            }
        }
    }

    pub fn sensing(&self) -> Result<SensingSpec> {
        let kind = self.choice("sensing.kind", &["radon", "gaussian"])?.to_string();
        let side = self.usize("sensing.side")?;
        if side == 0 {
            return Err(bad("`sensing.side` must be positive"));
        }
        let angles = self.usize("sensing.angles")?;
        let (angles, m, seed) = if kind == "radon" {
            (angles, angles * detector_count(side), 0)
        } else {
            (0, self.usize("sensing.m")?, self.seed_of("sensing.seed")?)
        };
        let dictionary = self.choice("sensing.dictionary", &["identity", "dct"])?.to_string();
        Ok(SensingSpec {
            kind,
            side,
            angles,
            m,
            seed,
            dictionary,
        })
    }

    /// Signal length `side²`, available without a full sensing section.
    pub fn signal_len(&self) -> Result<usize> {
        let side = self.usize("sensing.side")?;
        Ok(side * side)
    }

    pub fn data(&self) -> Result<DataSpec> {
        let snr_db = self.f64("data.snr_db")?;
        if snr_db == f64::NEG_INFINITY {
            return Err(bad("`data.snr_db` must be finite or inf"));
        }
        let images = match self.req("data.images")? {
            "synthetic" => None,
            dir => Some(dir.to_string()),
        };
        Ok(DataSpec {
            n_samples: self.usize("data.n_samples")?,
            snr_db,
            seed: self.seed_of("data.seed")?,
            images,
        })
    }

    pub fn regularizer(&self) -> Result<ScaleRegularizer> {
        match self.choice("reg.kind", &["logsq", "zero"])? {
            "zero" => Ok(ScaleRegularizer::zero()),
            _ => {
                let mu = self.f64("reg.mu")?;
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(bad("`reg.mu` must be positive"));
                }
                Ok(ScaleRegularizer::log_squared(mu))
            }
        }
    }

    pub fn covariance(&self, n: usize) -> Result<CovarianceParam> {
        let kind = self.cov_kind("tikhonov.cov_kind")?;
        let init = self.f64("tikhonov.cov_init")?;
        let eps = self.f64("tikhonov.eps")?;
        if !(eps > 0.0) || !(init > 0.0) || !init.is_finite() {
            return Err(bad("`tikhonov.eps` and `tikhonov.cov_init` must be positive"));
        }
        Ok(CovarianceParam::initial(kind, n, init, eps)?)
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let tikhonov = match self.choice("tikhonov.mode", &["exact", "nagd"])? {
            "exact" => TikhonovMode::Exact,
            _ => TikhonovMode::Nagd(NagdConfig {
                steps: self.usize("tikhonov.nagd_steps")?,
                eta: self.step_rule("tikhonov.eta")?,
                divergence_window: self.usize("tikhonov.divergence_window")?,
            }),
        };
        let method = match self.choice("zstep.method", &["pgd", "ista"])? {
            "pgd" => ZStepMethod::Pgd,
            _ => ZStepMethod::Ista,
        };
        let step = match self.choice("zstep.linesearch", &["fixed", "backtrack", "auto"])? {
            "fixed" => ZStepSize::Fixed(self.f64("zstep.eta")?),
            "auto" => ZStepSize::Auto,
            _ => ZStepSize::Backtracking,
        };
        let max_halvings = self.usize("zstep.max_halvings")?;
        let cfg = SolverConfig {
            outer_iters: self.usize("solver.K")?,
            inner_iters: self.usize("solver.J")?,
            init_bound: self.f64("solver.b")?,
            tikhonov,
            method,
            linesearch: LinesearchConfig {
                step,
                alpha: self.f64("zstep.alpha")?,
                shrink: self.f64("zstep.shrink")?,
                eta_init: self.f64("zstep.eta_init")?,
                max_halvings: u32::try_from(max_halvings).map_err(|_| bad("`zstep.max_halvings` is too large"))?,
            },
            stop_tol: self.f64("solver.stop_tol")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Wall-clock budget per sample in seconds.
    pub fn max_wall(&self) -> Result<Option<f64>> {
        match self.req("solver.max_wall")? {
            "none" => Ok(None),
            _ => {
                let s = self.f64("solver.max_wall")?;
                if !(s > 0.0) {
                    return Err(bad("`solver.max_wall` must be positive or `none`"));
                }
                Ok(Some(s))
            }
        }
    }

    pub fn net(&self) -> Result<NetConfig> {
        let channels_raw = self.req("net.channels")?;
        let channels = channels_raw
            .split(',')
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Self::invalid("net.channels", channels_raw, "a comma separated list of integers"))?;
        let variant = match self.choice("net.variant", &["pgd", "ista"])? {
            "pgd" => Variant::Pgd,
            _ => Variant::Ista,
        };
        let u_mode = match self.choice("net.u_mode", &["exact", "nagd"])? {
            "exact" => UMode::Exact,
            _ => UMode::Nagd {
                steps: self.usize("net.nagd_steps")?,
                eta: self.step_rule("net.nagd_eta")?,
            },
        };
        let cfg = NetConfig {
            outer_iters: self.usize("net.K")?,
            inner_iters: self.usize("net.J")?,
            kernel: self.usize("net.kernel")?,
            channels,
            variant,
            cov_kind: self.cov_kind("net.cov_kind")?,
            cov_init: self.f64("net.cov_init")?,
            eps: self.f64("net.eps")?,
            gamma_max: self.f64("net.gamma_max")?,
            init_bound: self.f64("net.b")?,
            u_mode,
            refine: self.bool("net.refine")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let patience = self.usize("train.early_stop")?;
        let cfg = TrainConfig {
            lr: self.f64("train.lr")?,
            epochs: self.usize("train.epochs")?,
            batch: self.usize("train.batch")?,
            beta1: self.f64("train.beta1")?,
            beta2: self.f64("train.beta2")?,
            eps_adam: self.f64("train.eps_adam")?,
            seed: self.seed_of("train.seed")?,
            early_stop: (patience > 0).then_some(patience),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn val_fraction(&self) -> Result<f64> {
        let f = self.f64("train.val_fraction")?;
        if !(0.0..1.0).contains(&f) {
            return Err(bad("`train.val_fraction` must lie in [0, 1)"));
        }
        Ok(f)
    }
}

/// Canonical text form of a network configuration, keyed like the config.
pub fn net_signature(cfg: &NetConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("net.K", cfg.outer_iters.to_string());
    put("net.J", cfg.inner_iters.to_string());
    put("net.kernel", cfg.kernel.to_string());
    put(
        "net.channels",
        cfg.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
    );
    put("net.variant", cfg.variant.name().to_string());
    put("net.cov_kind", cfg.cov_kind.name().to_string());
    put("net.cov_init", cfg.cov_init.to_string());
    put("net.eps", cfg.eps.to_string());
    put("net.gamma_max", cfg.gamma_max.to_string());
    put("net.b", cfg.init_bound.to_string());
    let (mode, steps, eta) = match cfg.u_mode {
        UMode::Exact => ("exact", String::from("-"), String::from("-")),
        UMode::Nagd { steps, eta } => (
            "nagd",
            steps.to_string(),
            match eta {
                StepRule::Auto => "auto".to_string(),
                StepRule::Fixed(e) => e.to_string(),
            },
        ),
    };
    put("net.u_mode", mode.to_string());
    put("net.nagd_steps", steps);
    put("net.nagd_eta", eta);
    put("net.refine", cfg.refine.to_string());
    m
}
