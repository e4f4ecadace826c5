//! Synthetic images and measurement pairs.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result};
use crate::net::Sample;
use crate::sensing::{measure, Dictionary, SensingModel};

/// Random smooth blobs plus a few rectangles, scaled so the maximum is 1.
pub fn synthetic_image<R: Rng>(side: usize, rng: &mut R) -> DVector<f64> {
    let n = side * side;
    let mut img = alloc::vec![0.0; n];
    let s = side as f64;
    let blobs = rng.random_range(2..=4);
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let width = rng.random_range(0.1 * s + 0.5..0.35 * s + 1.0);
        let amp = rng.random_range(0.3..1.0);
        for r in 0..side {
            for c in 0..side {
                let dy = r as f64 + 0.5 - cy;
                let dx = c as f64 + 0.5 - cx;
                img[r * side + c] += amp * libm::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
            }
        }
    }
    let rects = rng.random_range(1..=2);
    for _ in 0..rects {
        let h = rng.random_range(1..=side.div_ceil(2));
        let w = rng.random_range(1..=side.div_ceil(2));
        let r0 = rng.random_range(0..=side - h);
        let c0 = rng.random_range(0..=side - w);
        let amp = rng.random_range(0.2..0.8);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                img[r * side + c] += amp;
            }
        }
    }
    let peak = img.iter().copied().fold(0.0f64, f64::max);
    if peak > 0.0 {
        img.iter_mut().for_each(|v| *v /= peak);
    }
    DVector::from_vec(img)
}

/// `count` synthetic images from one seeded stream.
pub fn synthetic_images(side: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(side, &mut rng)).collect()
}

/// Per-sample noise seed derived from the dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
}

/// Measurement pairs for images `s_i`. With a dictionary the stored target
/// is the coefficient vector `Φᵀ s_i`, so that `A c_i = Ψ s_i`.
pub fn make_samples(model: &SensingModel, images: &[DVector<f64>], snr_db: f64, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        check_len("image", model.n(), img.len())?;
        let c = match model.phi() {
            Dictionary::Identity => img.clone(),
            Dictionary::Dense(phi) => phi.tr_mul(img),
        };
        let y = measure(model, &c, snr_db, sample_seed(seed, i))?.y;
        out.push(Sample { y, c });
    }
    Ok(out)
}

/// Maps a stored target back to the image domain.
pub fn to_image(model: &SensingModel, c: &DVector<f64>) -> DVector<f64> {
    match model.phi() {
        Dictionary::Identity => c.clone(),
        Dictionary::Dense(phi) => phi * c,
    }
}
