//! On-disk datasets: a JSON manifest plus one `y`/`c` blob pair per sample.

use std::path::Path;

use cg_invert_core::data::{make_samples, synthetic_images};
use cg_invert_core::net::Sample;
use cg_invert_core::sensing::SensingModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataSpec, SensingSpec};
use crate::error::{CliError, Result};
use crate::io;

pub const FORMAT: &str = "cg-invert-dataset/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub y: String,
    pub c: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// Hash of every generation parameter.
    pub fingerprint: String,
    /// Hash of the sensing section alone.
    pub sensing_fingerprint: String,
    pub sensing: SensingSpec,
    pub m: usize,
    pub n: usize,
    pub n_samples: usize,
    pub snr_db: String,
    pub seed: u64,
    pub images: String,
    pub samples: Vec<SampleEntry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sensing_fingerprint(spec: &SensingSpec) -> String {
    sha_hex(&serde_json::to_vec(spec).expect("sensing spec serialises"))
}

fn snr_text(snr_db: f64) -> String {
    if snr_db == f64::INFINITY {
        "inf".into()
    } else {
        format!("{snr_db:?}")
    }
}

pub fn fingerprint(spec: &SensingSpec, data: &DataSpec) -> String {
    let key = serde_json::json!({
        "format": FORMAT,
        "sensing": spec,
        "n_samples": data.n_samples,
        "snr_db": snr_text(data.snr_db),
        "seed": data.seed,
        "images": data.images.as_deref().unwrap_or("synthetic"),
    });
    sha_hex(key.to_string().as_bytes())
}

fn source_images(spec: &SensingSpec, data: &DataSpec) -> Result<Vec<DVector<f64>>> {
    match &data.images {
        None => Ok(synthetic_images(spec.side, data.n_samples, data.seed)),
        Some(dir) => {
            let imgs = io::read_image_dir(Path::new(dir), spec.side)?;
            if imgs.len() < data.n_samples {
                return Err(cg_invert_core::Error::InsufficientImages {
                    needed: data.n_samples,
                    available: imgs.len(),
                }
                .into());
            }
            Ok(imgs.into_iter().take(data.n_samples).map(DVector::from_vec).collect())
        }
    }
}

/// Generates measurements for `data` under `model` and writes them to `out`.
pub fn generate(spec: &SensingSpec, data: &DataSpec, model: &SensingModel, out: &Path) -> Result<Manifest> {
    let images = source_images(spec, data)?;
    let samples = make_samples(model, &images, data.snr_db, data.seed)?;
    io::create_dir(out)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (id, (s, img)) in samples.iter().zip(&images).enumerate() {
        let e = SampleEntry {
            id,
            y: format!("y_{id}.f64"),
            c: format!("c_{id}.f64"),
            image: format!("c_{id}.pgm"),
        };
        io::write_f64s(&out.join(&e.y), s.y.as_slice())?;
        io::write_f64s(&out.join(&e.c), s.c.as_slice())?;
        io::write_pgm(&out.join(&e.image), spec.side, img.as_slice())?;
        entries.push(e);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        fingerprint: fingerprint(spec, data),
        sensing_fingerprint: sensing_fingerprint(spec),
        sensing: spec.clone(),
        m: model.m(),
        n: model.n(),
        n_samples: samples.len(),
        snr_db: snr_text(data.snr_db),
        seed: data.seed,
        images: data.images.clone().unwrap_or_else(|| "synthetic".into()),
        samples: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    json.push('\n');
    io::write_atomic(&out.join(MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(CliError::Data(format!("{}: unknown format `{}`", path.display(), m.format)));
    }
    Ok(m)
}

/// Loads a dataset and checks that it was generated with `spec`.
pub fn load(dir: &Path, spec: &SensingSpec) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(dir)?;
    let want = sensing_fingerprint(spec);
    if manifest.sensing_fingerprint != want {
        return Err(CliError::Data(format!(
            "dataset fingerprint mismatch: {} was generated with sensing {:?}, config has {:?}",
            dir.display(),
            manifest.sensing,
            spec
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let y = io::read_f64s(&dir.join(&e.y))?;
        let c = io::read_f64s(&dir.join(&e.c))?;
        if y.len() != manifest.m || c.len() != manifest.n {
            return Err(CliError::Data(format!(
                "sample {}: expected y of length {} and c of length {}, got {} and {}",
                e.id,
                manifest.m,
                manifest.n,
                y.len(),
                c.len()
            )));
        }
        samples.push(Sample {
            y: DVector::from_vec(y),
            c: DVector::from_vec(c),
        });
    }
    Ok((manifest, samples))
}
