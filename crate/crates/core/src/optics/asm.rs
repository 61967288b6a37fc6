//! Band-limited angular spectrum method.
//!
//! Frequency layout: the public transfer grid returned by [`asm_kernel`] is
//! DC-centered. Entry `(i, j)` of an `h x w` grid holds frequency
//! `f_y = (i - h/2) / (h * pitch)`, `f_x = (j - w/2) / (w * pitch)` with
//! integer division, i.e. the `fftshift` of numpy's `fftfreq`. Internally
//! the kernel is stored in corner-origin order to multiply FFT output
//! directly.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;

use super::fft::Fft2;
use super::{center_offset, crop_center, AmplitudeMap, ComplexField, OpticsConfig, PhaseMap};
use crate::{Error, Result, Scalar};

fn kernel_value(fx: f64, fy: f64, wavelength: f64, distance: f64) -> Complex<f64> {
    let cutoff = 1.0 / (wavelength * wavelength);
    if fx * fx + fy * fy < cutoff {
        let arg = 1.0 - (wavelength * fx).powi(2) - (wavelength * fy).powi(2);
        let phase = 2.0 * std::f64::consts::PI * distance / wavelength * arg.sqrt();
        Complex::new(phase.cos(), phase.sin())
    } else {
        Complex::new(0.0, 0.0)
    }
}

#[inline]
fn centered_freq(i: usize, n: usize, pitch: f64) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 * pitch)
}

/// Transfer function `H(f_x, f_y, d)` on a DC-centered `shape` grid.
pub fn asm_kernel<T: Scalar>(
    shape: (usize, usize),
    config: &OpticsConfig,
    distance: f64,
) -> Result<Array2<Complex<T>>> {
    config.validate()?;
    if !distance.is_finite() {
        return Err(Error::InvalidConfig("distance must be finite".into()));
    }
    let (h, w) = shape;
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let fy = centered_freq(i, h, config.pixel_pitch);
        let fx = centered_freq(j, w, config.pixel_pitch);
        let v = kernel_value(fx, fy, config.wavelength, distance);
        Complex::new(T::of(v.re), T::of(v.im))
    }))
}

/// Propagation operator for one frame shape and distance, with cached FFT
/// plans and kernel. The frame is zero-padded (centered) to the padded grid,
/// filtered, and cropped back.
#[derive(Clone)]
pub struct Propagator<T: Scalar> {
    frame: (usize, usize),
    padded: (usize, usize),
    offset: (usize, usize),
    /// Corner-origin transfer function on the padded grid.
    kernel: Vec<Complex<T>>,
    fft: Fft2<T>,
}

impl<T: Scalar> Propagator<T> {
    pub fn new(frame: (usize, usize), config: &OpticsConfig, distance: f64) -> Result<Self> {
        if frame.0 == 0 || frame.1 == 0 {
            return Err(Error::InvalidField("frame must be at least 1x1".into()));
        }
        let padded = config.padded_shape(frame);
        let centered = asm_kernel::<T>(padded, config, distance)?;
        let (ph, pw) = padded;
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); ph * pw];
        for k in 0..ph {
            let i = (k + ph / 2) % ph;
            for l in 0..pw {
                let j = (l + pw / 2) % pw;
                kernel[k * pw + l] = centered[[i, j]];
            }
        }
        Ok(Self {
            frame,
            padded,
            offset: (center_offset(ph, frame.0), center_offset(pw, frame.1)),
            kernel,
            fft: Fft2::new(ph, pw),
        })
    }

    pub fn frame(&self) -> (usize, usize) {
        self.frame
    }

    pub fn padded(&self) -> (usize, usize) {
        self.padded
    }

    /// Offset of the frame inside the padded grid.
    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    /// Embeds a frame-sized field at the center of a zeroed padded buffer.
    pub fn pad(&self, field: ArrayView2<'_, Complex<T>>) -> Vec<Complex<T>> {
        assert_eq!(field.dim(), self.frame, "field does not match propagator frame");
        let (ph, pw) = self.padded;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); ph * pw];
        let (oy, ox) = self.offset;
        for ((i, j), v) in field.indexed_iter() {
            buf[(i + oy) * pw + j + ox] = *v;
        }
        buf
    }

    pub fn crop(&self, buf: &[Complex<T>]) -> Array2<Complex<T>> {
        let pw = self.padded.1;
        let (oy, ox) = self.offset;
        Array2::from_shape_fn(self.frame, |(i, j)| buf[(i + oy) * pw + j + ox])
    }

    /// Filters a padded buffer in place (no padding or cropping).
    pub fn apply_padded(&self, buf: &mut [Complex<T>]) {
        self.fft.forward(buf);
        for (v, k) in buf.iter_mut().zip(&self.kernel) {
            *v = *v * *k;
        }
        self.fft.inverse(buf);
    }

    /// Adjoint of [`Propagator::apply_padded`] (conjugated kernel).
    pub fn adjoint_padded(&self, buf: &mut [Complex<T>]) {
        self.fft.forward(buf);
        for (v, k) in buf.iter_mut().zip(&self.kernel) {
            *v = *v * k.conj();
        }
        self.fft.inverse(buf);
    }

    /// Pad, filter, crop.
    pub fn apply(&self, field: ArrayView2<'_, Complex<T>>) -> Array2<Complex<T>> {
        let mut buf = self.pad(field);
        self.apply_padded(&mut buf);
        self.crop(&buf)
    }

    /// Adjoint of [`Propagator::apply`].
    pub fn adjoint(&self, field: ArrayView2<'_, Complex<T>>) -> Array2<Complex<T>> {
        let mut buf = self.pad(field);
        self.adjoint_padded(&mut buf);
        self.crop(&buf)
    }
}

/// Propagates a field by `distance` using its own optics configuration.
pub fn propagate<T: Scalar>(field: &ComplexField<T>, distance: f64) -> Result<ComplexField<T>> {
    field.check()?;
    let p = Propagator::new(field.dim(), &field.config, distance)?;
    Ok(ComplexField {
        data: p.apply(field.data.view()),
        config: field.config.clone(),
    })
}

/// `|f^{-d}(phase, 1)|` cropped to the configured roi.
pub fn reconstruct_amplitude<T: Scalar>(
    phase: &PhaseMap<T>,
    config: &OpticsConfig,
) -> Result<AmplitudeMap<T>> {
    let frame = phase.dim();
    let roi = config.roi_in(frame)?;
    let p = Propagator::new(frame, config, -config.distance)?;
    reconstruct_with(&p, phase, roi)
}

/// Same as [`reconstruct_amplitude`] with a prebuilt backward propagator.
pub fn reconstruct_with<T: Scalar>(
    backward: &Propagator<T>,
    phase: &PhaseMap<T>,
    roi: (usize, usize),
) -> Result<AmplitudeMap<T>> {
    if phase.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidField("non-finite phase sample".into()));
    }
    let unit = phase.0.mapv(|p| Complex::from_polar(T::one(), p));
    let obj = backward.apply(unit.view());
    let amp = crop_center(obj.view(), roi)?.mapv(|c| c.norm());
    Ok(AmplitudeMap(amp))
}
