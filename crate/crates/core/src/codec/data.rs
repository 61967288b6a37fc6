//! Training samples and the synthetic desk-scale corpus.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::Tensor;
use crate::optics::{amplitude_from_intensity, crop_center, AmplitudeMap, OpticsConfig, Propagator};
use crate::{Result, Scalar};

/// One codec example: the `[3,H,W]` input (hologram amplitude, hologram
/// phase / pi, target amplitude) and the `[1,rh,rw]` roi target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Scalar> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn frame(&self) -> (usize, usize) {
        let s = self.input.shape();
        (s[1], s[2])
    }

    pub fn target_map(&self) -> AmplitudeMap<T> {
        let (_, h, w) = self.target.dims3();
        AmplitudeMap(Array2::from_shape_vec((h, w), self.target.data().to_vec()).expect("target shape"))
    }
}

/// Intensity image to codec sample. The amplitude is scaled to unit RMS
/// over the roi; the complex hologram is that amplitude (zero phase)
/// propagated to the hologram plane.
pub fn prepare_sample<T: Scalar>(intensity: ArrayView2<'_, f64>, config: &OpticsConfig, gamma: f64) -> Result<Sample<T>> {
    let frame = intensity.dim();
    let roi = config.roi_in(frame)?;
    let amp = amplitude_from_intensity(intensity, gamma)?;
    let rms = {
        let r = crop_center(amp.view(), roi)?;
        (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
    };
    let s = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let a = amp.0.mapv(|v| v * s);
    let prop = Propagator::<f64>::new(frame, config, config.distance)?;
    let holo = prop.apply(a.mapv(|v| Complex::new(v, 0.0)).view());
    let n = frame.0 * frame.1;
    let mut input = Vec::with_capacity(3 * n);
    input.extend(holo.iter().map(|c| T::of(c.norm())));
    input.extend(holo.iter().map(|c| T::of(c.arg() / std::f64::consts::PI)));
    input.extend(a.iter().map(|&v| T::of(v)));
    let target: Vec<T> = crop_center(a.view(), roi)?.iter().map(|&v| T::of(v)).collect();
    Ok(Sample {
        input: Tensor::new(&[3, frame.0, frame.1], input),
        target: Tensor::new(&[1, roi.0, roi.1], target),
    })
}

/// Deterministic synthetic intensity image in `[0, 1]`: a smooth
/// background, Gaussian blobs, a few rectangles and a grating patch.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gy, gx) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let base = rng.random_range(0.1..0.4);
    let mut img = Array2::from_shape_fn((h, w), |(i, j)| {
        base + gy * i as f64 / h as f64 + gx * j as f64 / w as f64
    });
    for _ in 0..rng.random_range(2..6) {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let s = rng.random_range(0.05..0.25) * h.min(w) as f64;
        let a = rng.random_range(-0.5..0.8);
        for ((i, j), v) in img.indexed_iter_mut() {
            let r2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            *v += a * (-r2 / (2.0 * s * s)).exp();
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (dy, dx) = (rng.random_range(2..h / 3 + 3), rng.random_range(2..w / 3 + 3));
        let a = rng.random_range(-0.4..0.6);
        for i in y0..(y0 + dy).min(h) {
            for j in x0..(x0 + dx).min(w) {
                img[[i, j]] += a;
            }
        }
    }
    let period = rng.random_range(3.0..12.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (y0, x0) = (rng.random_range(0..h / 2 + 1), rng.random_range(0..w / 2 + 1));
    for i in y0..(y0 + h / 3).min(h) {
        for j in x0..(x0 + w / 3).min(w) {
            let t = (i as f64 * angle.sin() + j as f64 * angle.cos()) / period;
            img[[i, j]] += 0.2 * (2.0 * std::f64::consts::PI * t).sin();
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// `n` synthetic images; image `i` uses seed `seed * 1_000_003 + i`.
pub fn synthetic_corpus(n: usize, h: usize, w: usize, seed: u64) -> Vec<Array2<f64>> {
    (0..n as u64)
        .map(|i| synthetic_image(h, w, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}
