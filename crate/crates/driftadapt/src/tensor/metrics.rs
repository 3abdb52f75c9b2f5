//! Image quality metrics. PSNR and SSIM are computed over all channels; for
//! complex tensors PSNR uses the complex modulus of the error while SSIM is
//! evaluated on the elementwise magnitude image.

use super::{Dtype, Tensor};
use crate::error::{Error, Result};

/// PSNR is capped here instead of returning +inf so CSV output stays numeric.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Peak signal-to-noise ratio in dB: 10·log10(peak² / MSE), capped at 300 dB.
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::invalid("psnr peak must be > 0"));
    }
    let mse = x.mse(reference)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut weights = Vec::with_capacity(window * window);
    for di in -half..=half {
        for dj in -half..=half {
            let r2 = (di * di + dj * dj) as f64;
            weights.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Scalar view used by SSIM: real part for real tensors, modulus for complex.
fn ssim_plane(t: &Tensor) -> Vec<f64> {
    match t.dtype() {
        Dtype::Real => t.data().iter().map(|z| z.re).collect(),
        Dtype::Complex => t.data().iter().map(|z| z.norm()).collect(),
    }
}

/// Mean local SSIM with a Gaussian window (σ = 1.5) and standard constants
/// C₁ = (0.01·peak)², C₂ = (0.03·peak)². Windows wrap circularly, matching the
/// periodic boundary convention used throughout the crate.
pub fn ssim(x: &Tensor, reference: &Tensor, window: usize, peak: f64) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::ShapeMismatch { left: x.shape(), right: reference.shape() });
    }
    let shape = x.shape();
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    if window % 2 == 0 || window == 0 {
        return Err(Error::invalid("ssim window must be odd"));
    }
    if window > h.min(w) {
        return Err(Error::invalid(format!(
            "ssim window {window} exceeds min image side {}",
            h.min(w)
        )));
    }
    if peak <= 0.0 {
        return Err(Error::invalid("ssim peak must be > 0"));
    }

    let weights = gaussian_window(window, 1.5);
    let half = (window / 2) as isize;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let xs = ssim_plane(x);
    let ys = ssim_plane(reference);

    let mut acc = 0.0;
    for chan in 0..c {
        let base = chan * h * w;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                let mut widx = 0;
                for di in -half..=half {
                    let ii = (i + di).rem_euclid(h as isize) as usize;
                    for dj in -half..=half {
                        let jj = (j + dj).rem_euclid(w as isize) as usize;
                        let (a, b) = (xs[base + ii * w + jj], ys[base + ii * w + jj]);
                        let wt = weights[widx];
                        widx += 1;
                        mx += wt * a;
                        my += wt * b;
                        mxx += wt * a * a;
                        myy += wt * b * b;
                        mxy += wt * a * b;
                    }
                }
                let (vx, vy, vxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    Ok(acc / (c * h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn psnr_of_identical_images_hits_the_cap() {
        let x = Tensor::from_real(Shape::new(1, 2, 2), vec![0.3, 0.7, 0.1, 0.9]).unwrap();
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_zero_db_when_mse_equals_peak_squared() {
        let x = Tensor::from_real(Shape::new(1, 1, 2), vec![2.0, 2.0]).unwrap();
        let r = Tensor::from_real(Shape::new(1, 1, 2), vec![0.0, 0.0]).unwrap();
        assert!(psnr(&x, &r, 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_hand_arithmetic_case() {
        // MSE = 1/4 against a zero reference => 10*log10(4) ≈ 6.0206 dB.
        let x = Tensor::from_real(Shape::new(1, 2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = Tensor::zeros(Dtype::Real, Shape::new(1, 2, 2));
        let got = psnr(&x, &r, 1.0).unwrap();
        assert!((got - 6.020599913279624).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn psnr_is_shift_invariant() {
        let x = Tensor::from_real(Shape::new(1, 2, 2), vec![0.1, 0.5, 0.4, 0.8]).unwrap();
        let r = Tensor::from_real(Shape::new(1, 2, 2), vec![0.2, 0.4, 0.4, 0.7]).unwrap();
        let ones = Tensor::from_real(Shape::new(1, 2, 2), vec![1.0; 4]).unwrap();
        let a = psnr(&x, &r, 1.0).unwrap();
        let b = psnr(
            &x.add(&ones.scaled(0.37)).unwrap(),
            &r.add(&ones.scaled(0.37)).unwrap(),
            1.0,
        )
        .unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_exactly_one_for_identical_images() {
        let vals: Vec<f64> = (0..64).map(|i| (i as f64 * 0.713).sin() * 0.5 + 0.5).collect();
        let x = Tensor::from_real(Shape::new(1, 8, 8), vals).unwrap();
        assert_eq!(ssim(&x, &x, 7, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn constant_shift_degrades_only_luminance() {
        let vals: Vec<f64> = (0..64).map(|i| (i as f64 * 0.31).cos() * 0.3 + 0.5).collect();
        let x = Tensor::from_real(Shape::new(1, 8, 8), vals).unwrap();
        let ones = Tensor::from_real(Shape::new(1, 8, 8), vec![1.0; 64]).unwrap();
        let shifted = x.add(&ones.scaled(0.2)).unwrap();
        let s = ssim(&shifted, &x, 7, 1.0).unwrap();
        assert!(s < 1.0 && s > 0.0, "shifted SSIM should land strictly in (0, 1), got {s}");
    }

    #[test]
    fn oversized_window_is_an_error() {
        let x = Tensor::zeros(Dtype::Real, Shape::new(1, 4, 4));
        assert!(ssim(&x, &x, 5, 1.0).is_err());
        assert!(ssim(&x, &x, 4, 1.0).is_err(), "even windows are rejected");
    }
}
