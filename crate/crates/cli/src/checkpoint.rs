//! Network checkpoints: `checkpoint.json` plus a little-endian `params.f64`.

use std::collections::BTreeMap;
use std::path::Path;

use cg_invert_core::net::{param_count, NetConfig, NetParams};
use serde::{Deserialize, Serialize};

use crate::config::net_signature;
use crate::error::{CliError, Result};
use crate::io;

pub const FORMAT: &str = "cg-invert-checkpoint/1";
pub const MANIFEST: &str = "checkpoint.json";
pub const BLOB: &str = "params.f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub n: usize,
    pub param_count: usize,
    pub sensing_fingerprint: String,
    pub net: BTreeMap<String, String>,
    pub train_seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_mae: f64,
    /// Order of the parameter groups inside the blob.
    pub layout: Vec<Segment>,
}

pub fn layout(params: &NetParams) -> Vec<Segment> {
    let mut out = vec![Segment {
        name: "cov".into(),
        len: params.cov.to_flat().len(),
    }];
    for (b, block) in params.blocks.iter().enumerate() {
        out.push(Segment {
            name: format!("block{b}.delta"),
            len: 1,
        });
        for (l, w) in block.layers.iter().enumerate() {
            out.push(Segment {
                name: format!("block{b}.layer{l}"),
                len: w.len(),
            });
        }
    }
    out
}

pub fn save(dir: &Path, meta: &Checkpoint, params: &NetParams) -> Result<()> {
    io::create_dir(dir)?;
    io::write_f64s(&dir.join(BLOB), &params.to_flat())?;
    let mut json = serde_json::to_string_pretty(meta).expect("checkpoint serialises");
    json.push('\n');
    io::write_atomic(&dir.join(MANIFEST), json.as_bytes())
}

/// Loads parameters for `cfg`, rejecting checkpoints trained under a
/// different network configuration or sensing setup.
pub fn load(dir: &Path, cfg: &NetConfig, n: usize, sensing_fingerprint: &str) -> Result<(Checkpoint, NetParams)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let meta: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if meta.format != FORMAT {
        return Err(CliError::Data(format!("{}: unknown format `{}`", path.display(), meta.format)));
    }
    let want = net_signature(cfg);
    for (k, v) in &want {
        match meta.net.get(k) {
            Some(have) if have == v => {}
            have => {
                return Err(CliError::Config(format!(
                    "checkpoint/config mismatch on `{k}`: checkpoint has {}, config has {v}",
                    have.map_or("nothing", String::as_str)
                )))
            }
        }
    }
    if meta.n != n || meta.sensing_fingerprint != sensing_fingerprint {
        return Err(CliError::Config(
            "checkpoint/config mismatch: checkpoint was trained for a different sensing setup".into(),
        ));
    }
    let flat = io::read_f64s(&dir.join(BLOB))?;
    let count = param_count(cfg, n);
    if flat.len() != count || meta.param_count != count {
        return Err(CliError::Config(format!(
            "checkpoint/config mismatch: blob holds {} parameters, config needs {count}",
            flat.len()
        )));
    }
    let mut params = NetParams::init(cfg, n, 0)?;
    params.set_flat(&flat)?;
    params.check_shapes(cfg, n)?;
    Ok((meta, params))
}
