//! Image quality metrics on amplitude maps.

use ndarray::{Array2, ArrayView2};

use crate::codec::{ms_ssim_scales_for, MS_SSIM_WEIGHTS, SSIM_SIGMA, SSIM_WINDOW};
use crate::nn::gaussian_taps;
use crate::{Error, Result};

/// PSNR written to CSV for identical images.
pub const PSNR_CSV_CAP: f64 = 100.0;

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("images {:?} and {:?} differ", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; `+inf` for identical images.
pub fn psnr(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Domain(format!("peak {peak} must be positive")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Separable Gaussian filter, valid region only.
fn blur(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..k).map(|t| taps[t] * x[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean SSIM and mean contrast-structure term.
fn ssim_parts(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> (f64, f64) {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mu_a = blur(a, &taps);
    let mu_b = blur(b, &taps);
    let aa = blur(&(a * a), &taps);
    let bb = blur(&(b * b), &taps);
    let ab = blur(&(a * b), &taps);
    let n = mu_a.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        s += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
        c += cs;
    }
    (s / n, c / n)
}

fn check_range(range: f64) -> Result<()> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Domain(format!("data range {range} must be positive")));
    }
    Ok(())
}

/// Windowed SSIM (11-tap Gaussian, sigma 1.5, K1 = 0.01, K2 = 0.03) for
/// images with dynamic range `range`.
pub fn ssim(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, range: f64) -> Result<f64> {
    same_shape(a, b)?;
    check_range(range)?;
    let (h, w) = a.dim();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Shape(format!("image {h}x{w} smaller than the SSIM window")));
    }
    Ok(ssim_parts(&a.to_owned(), &b.to_owned(), range).0)
}

fn pool2(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = (x.nrows() / 2, x.ncols() / 2);
    Array2::from_shape_fn((h, w), |(i, j)| {
        0.25 * (x[[2 * i, 2 * j]] + x[[2 * i + 1, 2 * j]] + x[[2 * i, 2 * j + 1]] + x[[2 * i + 1, 2 * j + 1]])
    })
}

/// Multi-scale SSIM over `scales` dyadic levels (2x2 average pooling).
/// Weights are the first `scales` standard exponents renormalized to sum
/// to one; negative per-scale terms are clamped to zero.
pub fn ms_ssim_with(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, range: f64, scales: usize) -> Result<f64> {
    same_shape(a, b)?;
    check_range(range)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Domain(format!("{scales} scales requested, 1..=5 supported")));
    }
    let (h, w) = a.dim();
    if ms_ssim_scales_for(h, w)? < scales {
        return Err(Error::Shape(format!("image {h}x{w} too small for {scales} scales")));
    }
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut x, mut y) = (a.to_owned(), b.to_owned());
    let mut out = 1.0;
    for s in 0..scales {
        let (ss, cs) = ssim_parts(&x, &y, range);
        let term = if s + 1 == scales { ss } else { cs };
        out *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / total);
        if s + 1 < scales {
            x = pool2(&x);
            y = pool2(&y);
        }
    }
    Ok(out)
}

/// Standard five-scale MS-SSIM; needs both dimensions at least 176.
pub fn ms_ssim(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, range: f64) -> Result<f64> {
    ms_ssim_with(a, b, range, 5)
}

/// MS-SSIM with as many scales as the image supports.
pub fn ms_ssim_auto(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, range: f64) -> Result<f64> {
    let (h, w) = a.dim();
    ms_ssim_with(a, b, range, ms_ssim_scales_for(h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn psnr_examples() {
        let a = Array2::from_elem((4, 4), 0.5);
        let b = Array2::from_elem((4, 4), 0.6);
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(a.view(), b.view(), 0.0).is_err());
        assert!(psnr(a.view(), Array2::zeros((4, 5)).view(), 1.0).is_err());
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let a = Array2::from_elem((16, 16), 0.2);
        let b = Array2::from_elem((16, 16), 0.7);
        let c1: f64 = 0.01f64.powi(2);
        let want = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
        assert!((ssim(a.view(), b.view(), 1.0).unwrap() - want).abs() < 1e-12);
        assert!((ssim(a.view(), a.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_scale_limits() {
        let a = Array2::from_shape_fn((64, 128), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        assert!(ms_ssim(a.view(), a.view(), 1.0).is_err());
        assert!((ms_ssim_auto(a.view(), a.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ms_ssim_with(a.view(), a.view(), 1.0, 4).is_err());
        let big = Array2::from_shape_fn((176, 176), |(i, j)| ((i + 2 * j) % 13) as f64 / 12.0);
        assert!((ms_ssim(big.view(), big.view(), 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
