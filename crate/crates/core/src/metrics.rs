//! Image quality metrics.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

const SSIM_WINDOW: usize = 8;

/// `10·log10(peak² / MSE)`, `+∞` for identical inputs.
pub fn psnr(x: &DVector<f64>, reference: &DVector<f64>, peak: f64) -> Result<f64> {
    check_len("psnr input", reference.len(), x.len())?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig("psnr peak must be positive".into()));
    }
    let mse = (x - reference).norm_squared() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(peak * peak / mse))
}

/// Mean structural similarity over all `8×8` windows at stride 1 (the whole
/// image when it is smaller), with population statistics and
/// `C₁ = (0.01·peak)²`, `C₂ = (0.03·peak)²`.
pub fn ssim(x: &DVector<f64>, reference: &DVector<f64>, side: usize, peak: f64) -> Result<f64> {
    check_len("ssim input", side * side, x.len())?;
    check_len("ssim reference", side * side, reference.len())?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig("ssim peak must be positive".into()));
    }
    if side == 0 {
        return Err(Error::InvalidDimension("ssim needs a nonempty image".into()));
    }
    let w = SSIM_WINDOW.min(side);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let count = (w * w) as f64;
    let positions = side - w + 1;
    let mut total = 0.0;
    for r0 in 0..positions {
        for c0 in 0..positions {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    let a = x[r * side + c];
                    let b = reference[r * side + c];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / count;
            let my = sy / count;
            let vx = sxx / count - mx * mx;
            let vy = syy / count - my * my;
            let cxy = sxy / count - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_psnr() {
        let r = DVector::from_element(16, 0.5);
        let x = DVector::from_element(16, 0.6);
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn identical_images_have_unit_ssim() {
        let r = DVector::from_fn(100, |i, _| libm::sin(i as f64));
        assert!((ssim(&r, &r, 10, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
