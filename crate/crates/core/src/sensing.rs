//! Sensing operators, dictionaries and noisy measurement synthesis.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::linalg::{spectral_norm, Csr, Operator};

/// Dense copies of `A` are cached when they hold at most this many entries.
const DENSE_CACHE_LIMIT: usize = 1 << 22;
const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-8;
const PARALLEL_EPS: f64 = 1e-12;

/// Synthesis dictionary.
#[derive(Debug, Clone, PartialEq)]
pub enum Dictionary {
    Identity,
    Dense(DMatrix<f64>),
}

/// The composed operator `A = Ψ Φ` together with its spectral norm.
#[derive(Debug, Clone)]
pub struct SensingModel {
    psi: Operator,
    phi: Dictionary,
    /// `Ψ Φ` when a dictionary is present.
    composed: Option<DMatrix<f64>>,
    /// Dense copy of a sparse `A`, kept only for small problems.
    dense_cache: Option<DMatrix<f64>>,
    a_norm: f64,
    side: Option<usize>,
}

impl SensingModel {
    /// Wraps a measurement matrix with an optional dictionary. `side` is the
    /// image side length when the signal is a square image.
    pub fn new(psi: Operator, phi: Dictionary, side: Option<usize>) -> Result<Self> {
        let n = psi.cols();
        if let Some(s) = side {
            if s * s != n {
                return Err(Error::InvalidDimension(format!(
                    "side {s} does not match signal length {n}"
                )));
            }
        }
        let composed = match &phi {
            Dictionary::Identity => None,
            Dictionary::Dense(p) => {
                if p.nrows() != n || p.ncols() != n {
                    return Err(Error::InvalidDimension(format!(
                        "dictionary is {}x{}, expected {n}x{n}",
                        p.nrows(),
                        p.ncols()
                    )));
                }
                Some(psi.to_dense() * p)
            }
        };
        let dense_cache = match (&composed, &psi) {
            (None, Operator::Sparse(s)) if s.rows * s.cols <= DENSE_CACHE_LIMIT => {
                Some(s.to_dense())
            }
            _ => None,
        };
        let a_norm = match &composed {
            Some(a) => spectral_norm(&Operator::Dense(a.clone()), POWER_ITERS, POWER_TOL),
            None => spectral_norm(&psi, POWER_ITERS, POWER_TOL),
        };
        Ok(SensingModel {
            psi,
            phi,
            composed,
            dense_cache,
            a_norm,
            side,
        })
    }

    /// Convenience constructor for a dense `A` with no dictionary.
    pub fn from_dense(a: DMatrix<f64>) -> Result<Self> {
        let n = a.ncols();
        let side = perfect_sqrt(n);
        SensingModel::new(Operator::Dense(a), Dictionary::Identity, side)
    }

    /// Replaces the dictionary, recomputing `A` and its norm.
    pub fn with_dictionary(self, phi: Dictionary) -> Result<Self> {
        SensingModel::new(self.psi, phi, self.side)
    }

    pub fn m(&self) -> usize {
        self.psi.rows()
    }

    pub fn n(&self) -> usize {
        self.psi.cols()
    }

    pub fn side(&self) -> Option<usize> {
        self.side
    }

    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn psi(&self) -> &Operator {
        &self.psi
    }

    pub fn phi(&self) -> &Dictionary {
        &self.phi
    }

    /// `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator input", self.n(), x.len())?;
        Ok(self.mul(x))
    }

    /// `Aᵀ w`.
    pub fn adjoint(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("operator adjoint input", self.m(), w.len())?;
        Ok(self.tr_mul(w))
    }

    /// `A x` without a length check.
    pub(crate) fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match (&self.composed, &self.psi) {
            (Some(a), _) | (None, Operator::Dense(a)) => a * x,
            (None, Operator::Sparse(s)) => s.mul_vec(x),
        }
    }

    /// `Aᵀ w` without a length check.
    pub(crate) fn tr_mul(&self, w: &DVector<f64>) -> DVector<f64> {
        match (&self.composed, &self.psi) {
            (Some(a), _) | (None, Operator::Dense(a)) => a.tr_mul(w),
            (None, Operator::Sparse(s)) => s.tr_mul_vec(w),
        }
    }

    /// Dense `A`, borrowed when already available.
    pub fn a_dense(&self) -> Cow<'_, DMatrix<f64>> {
        if let Some(a) = &self.composed {
            return Cow::Borrowed(a);
        }
        if let Some(a) = &self.dense_cache {
            return Cow::Borrowed(a);
        }
        match &self.psi {
            Operator::Dense(a) => Cow::Borrowed(a),
            Operator::Sparse(s) => Cow::Owned(s.to_dense()),
        }
    }

    /// Row-major `(row, col, value)` listing of the nonzeros of `A`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match &self.composed {
            Some(a) => Operator::Dense(a.clone()).triplets(),
            None => self.psi.triplets(),
        }
    }
}

fn perfect_sqrt(n: usize) -> Option<usize> {
    let s = libm::round(libm::sqrt(n as f64)) as usize;
    (s * s == n).then_some(s)
}

/// Detector bins per projection angle for an image of the given side.
pub fn detector_count(side: usize) -> usize {
    libm::ceil(core::f64::consts::SQRT_2 * side as f64) as usize
}

/// Parallel-beam Radon matrix with exact ray/pixel intersection lengths.
///
/// The image occupies `[-side/2, side/2]²` with unit pixels; pixel `(r, c)`
/// sits at column `c` from the left and row `r` from the top. Angle `i` is
/// `iπ/n_angles`, detector `d` is offset `d - (nd - 1)/2` along the normal.
pub fn build_radon(side: usize, n_angles: usize) -> Result<SensingModel> {
    if side == 0 || n_angles == 0 {
        return Err(Error::InvalidDimension(format!(
            "radon needs side >= 1 and angles >= 1, got side={side}, angles={n_angles}"
        )));
    }
    let nd = detector_count(side);
    let n = side * side;
    let mut rows = Vec::with_capacity(n_angles * nd);
    for i in 0..n_angles {
        let theta = i as f64 * PI / n_angles as f64;
        for d in 0..nd {
            let t = d as f64 - (nd as f64 - 1.0) / 2.0;
            rows.push(radon_row(side, theta, t));
        }
    }
    SensingModel::new(
        Operator::Sparse(Csr::from_rows(n, rows)),
        Dictionary::Identity,
        Some(side),
    )
}

/// Ray geometry: the line `{t·n + s·dir}` with `n = (cos θ, sin θ)` and
/// `dir = (-sin θ, cos θ)`.
pub fn ray(theta: f64, t: f64) -> ((f64, f64), (f64, f64)) {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    ((t * c, t * s), (-s, c))
}

fn radon_row(side: usize, theta: f64, t: f64) -> Vec<(usize, f64)> {
    let h = side as f64 / 2.0;
    let (p0, dir) = ray(theta, t);
    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    for (p, d) in [(p0.0, dir.0), (p0.1, dir.1)] {
        if libm::fabs(d) < PARALLEL_EPS {
            if p <= -h || p >= h {
                return Vec::new();
            }
        } else {
            let a = (-h - p) / d;
            let b = (h - p) / d;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
    }
    if s_hi <= s_lo {
        return Vec::new();
    }
    let mut cuts = Vec::with_capacity(2 * side + 4);
    cuts.push(s_lo);
    cuts.push(s_hi);
    for (p, d) in [(p0.0, dir.0), (p0.1, dir.1)] {
        if libm::fabs(d) < PARALLEL_EPS {
            continue;
        }
        for k in 0..=side {
            let s = (-h + k as f64 - p) / d;
            if s > s_lo && s < s_hi {
                cuts.push(s);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let x = p0.0 + mid * dir.0;
        let y = p0.1 + mid * dir.1;
        let col = (libm::floor(x + h) as isize).clamp(0, side as isize - 1) as usize;
        let row = (libm::floor(h - y) as isize).clamp(0, side as isize - 1) as usize;
        entries.push((row * side + col, len));
    }
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (idx, w) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == idx => last.1 += w,
            _ => merged.push((idx, w)),
        }
    }
    merged
}

/// Dense Gaussian measurement matrix with i.i.d. standard normal entries.
pub fn build_gaussian(m: usize, n: usize, seed: u64) -> Result<SensingModel> {
    if m == 0 || n == 0 || m > n {
        return Err(Error::InvalidDimension(format!(
            "gaussian sensing needs 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Filled row by row so the stream order does not depend on storage order.
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..m * n {
        data.push(StandardNormal.sample(&mut rng));
    }
    let psi = DMatrix::from_row_slice(m, n, &data);
    SensingModel::new(Operator::Dense(psi), Dictionary::Identity, perfect_sqrt(n))
}

/// Orthonormal 1-D DCT-II matrix, `C[k][i] = α_k cos(π(2i+1)k / 2N)`.
pub fn dct_matrix(len: usize) -> DMatrix<f64> {
    let nf = len as f64;
    DMatrix::from_fn(len, len, |k, i| {
        let alpha = if k == 0 {
            libm::sqrt(1.0 / nf)
        } else {
            libm::sqrt(2.0 / nf)
        };
        alpha * libm::cos(PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf))
    })
}

/// 2-D DCT-II synthesis basis on row-major `side×side` images: column
/// `k·side + l` holds the separable basis image for frequency pair `(k, l)`.
pub fn build_dct(n: usize) -> Result<Dictionary> {
    let side = perfect_sqrt(n).ok_or(Error::NonSquareImage(n))?;
    let c = dct_matrix(side);
    let phi = DMatrix::from_fn(n, n, |pix, coef| {
        let (r, col) = (pix / side, pix % side);
        let (k, l) = (coef / side, coef % side);
        c[(k, r)] * c[(l, col)]
    });
    Ok(Dictionary::Dense(phi))
}

/// A noisy measurement and the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: DVector<f64>,
    pub snr_db: f64,
    pub noise_seed: u64,
}

/// `y = A c + ν` with white Gaussian `ν` rescaled so the realised SNR equals
/// `snr_db` exactly. An infinite SNR gives noiseless data.
pub fn measure(model: &SensingModel, c: &DVector<f64>, snr_db: f64, seed: u64) -> Result<Measurement> {
    let clean = model.apply(c)?;
    let y = add_noise(&clean, snr_db, seed)?;
    Ok(Measurement {
        y,
        snr_db,
        noise_seed: seed,
    })
}

/// Adds white Gaussian noise to `clean` at exactly the requested SNR.
pub fn add_noise(clean: &DVector<f64>, snr_db: f64, seed: u64) -> Result<DVector<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(clean.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let signal = clean.norm_squared();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nu = DVector::from_fn(clean.len(), |_, _| StandardNormal.sample(&mut rng));
    let raw = nu.norm_squared();
    let target = signal * libm::pow(10.0, -snr_db / 10.0);
    nu *= libm::sqrt(target / raw);
    Ok(clean + nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dct_first_column_is_constant_half() {
        let Dictionary::Dense(phi) = build_dct(4).unwrap() else {
            panic!()
        };
        for r in 0..4 {
            assert!((phi[(r, 0)] - 0.5).abs() < 1e-15);
        }
        let gram = phi.tr_mul(&phi) - DMatrix::identity(4, 4);
        assert!(gram.amax() < 1e-12);
    }

    #[test]
    fn dct_rejects_non_square() {
        assert_eq!(build_dct(5), Err(Error::NonSquareImage(5)));
    }

    #[test]
    fn gaussian_rejects_wide() {
        assert!(matches!(build_gaussian(5, 4, 1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn vertical_ray_through_centre_column() {
        // theta = 0: the ray runs along y at x = t.
        let row = radon_row(4, 0.0, 0.5);
        assert_eq!(row, vec![(2, 1.0), (6, 1.0), (10, 1.0), (14, 1.0)]);
    }

    #[test]
    fn ray_on_grid_boundary_is_empty() {
        assert!(radon_row(2, 0.0, 1.0).is_empty());
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let model = build_gaussian(3, 4, 2).unwrap();
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let m = measure(&model, &c, f64::INFINITY, 9).unwrap();
        assert_eq!(m.y, model.apply(&c).unwrap());
    }
}
