//! Composite reconstruction loss: MSE, MS-SSIM and a frequency-weighted DFT
//! distance on the reconstructed amplitude.

use std::rc::Rc;

use num_complex::Complex;

use super::LossWeights;
use crate::nn::{gaussian_taps, Graph, Tensor, Var};
use crate::optics::fft::Fft2;
use crate::optics::{AmplitudeMap, OpticsConfig, PhaseMap, Propagator};
use crate::{Error, Result, Scalar};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.0001;
pub const SSIM_C2: f64 = 0.0009;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Radial frequency (fraction of Nyquist) at which the DFT weight halves.
pub const WATSON_CORNER: f64 = 0.25;

/// Pyramid depth used for an image: as many of the five scales as keep the
/// coarsest level at least one window wide.
pub fn ms_ssim_scales_for(h: usize, w: usize) -> Result<usize> {
    let m = h.min(w);
    if m < SSIM_WINDOW {
        return Err(Error::Shape(format!("image {h}x{w} smaller than the {SSIM_WINDOW}-tap window")));
    }
    Ok((1..=5).take_while(|s| m >> (s - 1) >= SSIM_WINDOW).count())
}

/// Corner-origin DFT weights `1 / (1 + (rho / corner)^2)`, where `rho` is
/// the radial frequency relative to Nyquist.
pub fn watson_weights(h: usize, w: usize) -> Vec<f64> {
    let f = |k: usize, n: usize| k.min(n - k) as f64 / n as f64 / 0.5;
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let rho = (f(u, h).powi(2) + f(v, w).powi(2)).sqrt();
            out.push(1.0 / (1.0 + (rho / WATSON_CORNER).powi(2)));
        }
    }
    out
}

/// `sum_k w_k |DFT(a - b)_k|^2 / N^2`: symmetric, non-negative and zero only
/// for equal inputs since every weight is positive.
pub fn watson_dft_loss<T: Scalar>(a: &AmplitudeMap<T>, b: &AmplitudeMap<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    let fft = Fft2::<f64>::new(h, w);
    let mut buf: Vec<Complex<f64>> = a
        .0
        .iter()
        .zip(b.0.iter())
        .map(|(x, y)| Complex::new(x.to64() - y.to64(), 0.0))
        .collect();
    fft.forward(&mut buf);
    let n2 = ((h * w) as f64).powi(2);
    Ok(buf
        .iter()
        .zip(watson_weights(h, w))
        .map(|(c, wk)| wk * c.norm_sqr())
        .sum::<f64>()
        / n2)
}

/// Precomputed operators for the reconstruction loss of one frame shape.
pub struct ReconContext<T: Scalar> {
    pub weights: LossWeights,
    prop: Rc<Propagator<T>>,
    frame: (usize, usize),
    roi: (usize, usize),
    roi_at: (usize, usize),
    fft: Rc<Fft2<T>>,
    dft_weights: Rc<Vec<T>>,
    taps: Rc<Vec<T>>,
    scales: usize,
}

impl<T: Scalar> ReconContext<T> {
    pub fn new(frame: (usize, usize), config: &OpticsConfig, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let roi = config.roi_in(frame)?;
        let scales = if weights.msssim > 0.0 { ms_ssim_scales_for(roi.0, roi.1)? } else { 1 };
        Ok(Self {
            weights,
            prop: Rc::new(Propagator::new(frame, config, -config.distance)?),
            frame,
            roi,
            roi_at: ((frame.0 - roi.0) / 2, (frame.1 - roi.1) / 2),
            fft: Rc::new(Fft2::new(roi.0, roi.1)),
            dft_weights: Rc::new(watson_weights(roi.0, roi.1).into_iter().map(T::of).collect()),
            taps: Rc::new(gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into_iter().map(T::of).collect()),
            scales,
        })
    }

    pub fn frame(&self) -> (usize, usize) {
        self.frame
    }

    pub fn roi(&self) -> (usize, usize) {
        self.roi
    }

    pub fn propagator(&self) -> &Propagator<T> {
        &self.prop
    }

    /// `|f^{-d}(phase, 1)|` on the roi, `[1,rh,rw]`.
    pub fn amplitude<'g>(&self, phase: Var<'g, T>) -> Var<'g, T> {
        phase
            .phase_to_field()
            .propagate(Rc::clone(&self.prop))
            .complex_abs()
            .crop_hw(self.roi_at.0, self.roi_at.1, self.roi.0, self.roi.1)
    }

    /// MS-SSIM of two `[1,h,w]` images with this context's pyramid depth.
    pub fn ms_ssim<'g>(&self, x: Var<'g, T>, y: Var<'g, T>) -> Var<'g, T> {
        ms_ssim_var(x, y, &self.taps, self.scales)
    }

    /// Weighted loss between a reconstructed amplitude and the target.
    pub fn amplitude_loss<'g>(&self, amp: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
        let g = amp.graph();
        let w = self.weights;
        let diff = amp.sub(target);
        let mut total = g.constant(Tensor::scalar(T::zero()));
        if w.mse > 0.0 {
            total = total.add(diff.square().mean().scale(T::of(w.mse)));
        }
        if w.msssim > 0.0 {
            let one_minus = self.ms_ssim(amp, target).neg().add_scalar(T::one());
            total = total.add(one_minus.scale(T::of(w.msssim)));
        }
        if w.wfft > 0.0 {
            let e = diff.spectral_energy(Rc::clone(&self.fft), Rc::clone(&self.dft_weights));
            total = total.add(e.scale(T::of(w.wfft)));
        }
        total
    }

    /// Loss of a `[1,H,W]` phase against a `[1,rh,rw]` target amplitude.
    pub fn loss<'g>(&self, phase: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
        self.amplitude_loss(self.amplitude(phase), target)
    }
}

fn ms_ssim_var<'g, T: Scalar>(x: Var<'g, T>, y: Var<'g, T>, taps: &Rc<Vec<T>>, scales: usize) -> Var<'g, T> {
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let eps = T::of(1e-6);
    let (c1, c2) = (T::of(SSIM_C1), T::of(SSIM_C2));
    let two = T::of(2.0);
    let (mut x, mut y) = (x, y);
    let mut out: Option<Var<'g, T>> = None;
    for s in 0..scales {
        if s > 0 {
            x = x.avg_pool2();
            y = y.avg_pool2();
        }
        let f = |v: Var<'g, T>| v.filter_valid(Rc::clone(taps));
        let (mx, my) = (f(x), f(y));
        let (mx2, my2, mxy) = (mx.square(), my.square(), mx.mul(my));
        let sxx = f(x.square()).sub(mx2);
        let syy = f(y.square()).sub(my2);
        let sxy = f(x.mul(y)).sub(mxy);
        let cs_map = sxy.scale(two).add_scalar(c2).div(sxx.add(syy).add_scalar(c2));
        let term = if s + 1 == scales {
            let l_map = mxy.scale(two).add_scalar(c1).div(mx2.add(my2).add_scalar(c1));
            l_map.mul(cs_map).mean()
        } else {
            cs_map.mean()
        };
        let p = term.clamp_min(eps).powf(T::of(MS_SSIM_WEIGHTS[s] / total));
        out = Some(match out {
            None => p,
            Some(acc) => acc.mul(p),
        });
    }
    out.expect("at least one scale")
}

/// Composite loss of a phase map against a target amplitude on the roi.
pub fn reconstruction_loss<T: Scalar>(
    phase: &PhaseMap<T>,
    target: &AmplitudeMap<T>,
    config: &OpticsConfig,
    weights: LossWeights,
) -> Result<f64> {
    let ctx = ReconContext::<T>::new(phase.dim(), config, weights)?;
    if target.dim() != ctx.roi {
        return Err(Error::Shape(format!("target {:?} does not match roi {:?}", target.dim(), ctx.roi)));
    }
    let g = Graph::new();
    let (h, w) = phase.dim();
    let p = g.constant(Tensor::new(&[1, h, w], phase.0.iter().copied().collect()));
    let t = g.constant(Tensor::new(&[1, ctx.roi.0, ctx.roi.1], target.0.iter().copied().collect()));
    Ok(ctx.loss(p, t).item().to64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::reconstruct_amplitude;
    use crate::retrieval::random_phase;
    use ndarray::Array2;

    fn cfg(n: usize) -> OpticsConfig {
        OpticsConfig {
            wavelength: 520e-9,
            pixel_pitch: 6.4e-6,
            distance: 0.003,
            pad_factor: 2.0,
            roi: (n, n),
        }
    }

    #[test]
    fn zero_for_exact_reconstruction() {
        let c = cfg(16);
        let phase = random_phase::<f64>((16, 16), 3);
        let target = reconstruct_amplitude(&phase, &c).unwrap();
        let l = reconstruction_loss(&phase, &target, &c, LossWeights::default()).unwrap();
        assert!(l.abs() < 1e-12, "{l}");
    }

    #[test]
    fn mse_only_weights_reduce_to_mse() {
        let c = cfg(16);
        let phase = random_phase::<f64>((16, 16), 3);
        let target = AmplitudeMap(Array2::from_shape_fn((16, 16), |(i, j)| ((i + 2 * j) % 5) as f64 * 0.3));
        let rec = reconstruct_amplitude(&phase, &c).unwrap();
        let mse = rec.0.iter().zip(target.0.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 256.0;
        let w = LossWeights { mse: 1.0, msssim: 0.0, wfft: 0.0 };
        let l = reconstruction_loss(&phase, &target, &c, w).unwrap();
        assert!((l - mse).abs() < 1e-12);
    }

    #[test]
    fn watson_is_mse_with_unit_weights() {
        // Parseval: sum |DFT d|^2 / N^2 = mean d^2, and every weight is <= 1
        let a = AmplitudeMap(Array2::from_shape_fn((6, 5), |(i, j)| (i * j) as f64 * 0.1));
        let b = AmplitudeMap(Array2::from_shape_fn((6, 5), |(i, j)| (i + j) as f64 * 0.07));
        let mse = a.0.iter().zip(b.0.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 30.0;
        let l = watson_dft_loss(&a, &b).unwrap();
        assert!(l > 0.0 && l <= mse + 1e-15);
        assert_eq!(watson_weights(4, 4)[0], 1.0);
    }

    #[test]
    fn full_loss_gradient() {
        // 2 scales on a 24x24 roi, all three terms active
        let c = OpticsConfig { roi: (24, 24), ..cfg(24) };
        let w = LossWeights { mse: 1.0, msssim: 0.5, wfft: 0.3 };
        let ctx = ReconContext::<f64>::new((24, 24), &c, w).unwrap();
        assert_eq!(ctx.scales, 2);
        let phase = random_phase::<f64>((24, 24), 5);
        let target = Tensor::new(&[1, 24, 24], (0..576).map(|i| 0.5 + 0.4 * ((i as f64) * 0.37).sin()).collect());
        let x = Tensor::new(&[1, 24, 24], phase.0.iter().copied().collect());
        crate::nn::testing::check_grad(&[x], move |g, v| ctx.loss(v[0], g.constant(target.clone())));
    }

    #[test]
    fn scales_adapt_to_size() {
        assert_eq!(ms_ssim_scales_for(64, 128).unwrap(), 3);
        assert_eq!(ms_ssim_scales_for(176, 200).unwrap(), 5);
        assert_eq!(ms_ssim_scales_for(11, 11).unwrap(), 1);
        assert!(ms_ssim_scales_for(10, 40).is_err());
    }
}
