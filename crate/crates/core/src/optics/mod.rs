//! Complex fields, band-limited angular-spectrum propagation and the
//! intensity-to-amplitude preprocessing.

mod asm;
pub mod fft;

pub use asm::{asm_kernel, propagate, reconstruct_amplitude, reconstruct_with, Propagator};

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::{wrap_phase, Error, Result, Scalar};

/// Illumination wavelengths in meters, indexed by channel id (0 = red,
/// 1 = green, 2 = blue).
pub const CHANNEL_WAVELENGTHS: [f64; 3] = [638e-9, 520e-9, 450e-9];

/// Hologram-plane pixel pitch of the reference display, meters.
pub const DEFAULT_PIXEL_PITCH: f64 = 6.4e-6;

/// Object-to-hologram distance of the reference setup, meters.
pub const DEFAULT_DISTANCE: f64 = 0.2;

pub const DEFAULT_PAD_FACTOR: f64 = 2.0;

/// Propagation distance of the desk-scale training setup (meters).
pub const DESK_DISTANCE: f64 = 0.01;

/// Inverse display gamma applied before the square root.
pub const DEFAULT_GAMMA: f64 = 2.2;

/// Physical parameters of one color channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    /// Meters.
    pub wavelength: f64,
    /// Meters.
    pub pixel_pitch: f64,
    /// Meters; positive propagates object plane to hologram plane.
    pub distance: f64,
    /// Zero-padding multiplier applied to each dimension before the FFT.
    pub pad_factor: f64,
    /// Region of interest `(height, width)` centered in the frame.
    pub roi: (usize, usize),
}

impl OpticsConfig {
    /// Reference setup: 6.4 um pitch, 20 cm, 2x padding, 700x1400 roi.
    pub fn reference(channel: u8) -> Self {
        Self {
            wavelength: CHANNEL_WAVELENGTHS[channel as usize % 3],
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            distance: DEFAULT_DISTANCE,
            pad_factor: DEFAULT_PAD_FACTOR,
            roi: (700, 1400),
        }
    }

    /// Desk-scale setup: reference pitch and padding, 1 cm, roi = `frame`.
    pub fn desk(channel: u8, frame: (usize, usize)) -> Self {
        Self {
            distance: DESK_DISTANCE,
            roi: frame,
            ..Self::reference(channel)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pixel pitch must be positive, got {}",
                self.pixel_pitch
            )));
        }
        if !self.distance.is_finite() {
            return Err(Error::InvalidConfig("distance must be finite".into()));
        }
        if !(self.pad_factor.is_finite() && self.pad_factor >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pad factor must be >= 1, got {}",
                self.pad_factor
            )));
        }
        if self.roi.0 == 0 || self.roi.1 == 0 {
            return Err(Error::InvalidConfig("roi must be non-empty".into()));
        }
        Ok(())
    }

    /// FFT grid used for a frame of the given shape.
    pub fn padded_shape(&self, frame: (usize, usize)) -> (usize, usize) {
        let pad = |n: usize| ((n as f64) * self.pad_factor).ceil() as usize;
        (pad(frame.0).max(frame.0), pad(frame.1).max(frame.1))
    }

    /// Checks that the roi fits inside a frame and returns it.
    pub fn roi_in(&self, frame: (usize, usize)) -> Result<(usize, usize)> {
        if self.roi.0 > frame.0 || self.roi.1 > frame.1 {
            return Err(Error::InvalidConfig(format!(
                "roi {:?} does not fit frame {:?}",
                self.roi, frame
            )));
        }
        Ok(self.roi)
    }

    pub fn with_distance(&self, distance: f64) -> Self {
        Self {
            distance,
            ..self.clone()
        }
    }
}

/// Sampled complex field `a * exp(i phi)` together with its optics.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField<T: Scalar> {
    pub data: Array2<Complex<T>>,
    pub config: OpticsConfig,
}

impl<T: Scalar> ComplexField<T> {
    pub fn new(data: Array2<Complex<T>>, config: OpticsConfig) -> Result<Self> {
        let f = Self { data, config };
        f.check()?;
        Ok(f)
    }

    /// Builds `amplitude * exp(i phase)`.
    pub fn from_polar(
        amplitude: &AmplitudeMap<T>,
        phase: &PhaseMap<T>,
        config: OpticsConfig,
    ) -> Result<Self> {
        if amplitude.dim() != phase.dim() {
            return Err(Error::Shape(format!(
                "amplitude {:?} vs phase {:?}",
                amplitude.dim(),
                phase.dim()
            )));
        }
        let mut data = Array2::from_elem(amplitude.dim(), Complex::new(T::zero(), T::zero()));
        ndarray::Zip::from(&mut data)
            .and(amplitude.view())
            .and(phase.view())
            .for_each(|d, &a, &p| *d = Complex::from_polar(a, p));
        Self::new(data, config)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn check(&self) -> Result<()> {
        let (h, w) = self.data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidField("field must be at least 1x1".into()));
        }
        if self
            .data
            .iter()
            .any(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        Ok(())
    }

    pub fn amplitude(&self) -> AmplitudeMap<T> {
        AmplitudeMap(self.data.mapv(|c| c.norm()))
    }

    pub fn phase(&self) -> PhaseMap<T> {
        PhaseMap(self.data.mapv(|c| wrap_phase(c.arg())))
    }

    /// Squared L2 norm.
    pub fn energy(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Real phase map with every value in `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap<T: Scalar>(pub Array2<T>);

impl<T: Scalar> PhaseMap<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        let pi = T::PI();
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite phase sample {v}")));
        }
        if let Some(v) = data.iter().find(|&&v| v <= -pi || v > pi) {
            return Err(Error::Domain(format!("phase {v} outside (-pi, pi]")));
        }
        Ok(Self(data))
    }

    /// Wraps arbitrary finite angles into `(-pi, pi]`.
    pub fn wrapped(data: Array2<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite phase sample".into()));
        }
        Ok(Self(data.mapv(wrap_phase)))
    }

    pub fn zeros(dim: (usize, usize)) -> Self {
        Self(Array2::zeros(dim))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    /// Unit-amplitude field `exp(i phase)`.
    pub fn to_unit_field(&self, config: OpticsConfig) -> Result<ComplexField<T>> {
        ComplexField::new(self.0.mapv(|p| Complex::from_polar(T::one(), p)), config)
    }
}

/// Non-negative amplitude map.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeMap<T: Scalar>(pub Array2<T>);

impl<T: Scalar> AmplitudeMap<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| !v.is_finite() || v < T::zero()) {
            return Err(Error::Domain(format!("amplitude sample {v} is negative or non-finite")));
        }
        Ok(Self(data))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    /// Centered crop.
    pub fn crop_center(&self, shape: (usize, usize)) -> Result<Self> {
        Ok(Self(crop_center(self.0.view(), shape)?.to_owned()))
    }

    /// Rescales so the mean of `a^2` equals one.
    pub fn normalized_energy(&self) -> Self {
        let n = T::of_usize(self.0.len().max(1));
        let ms: T = self.0.iter().map(|&v| v * v).sum::<T>() / n;
        if ms > T::zero() {
            let s = ms.sqrt();
            Self(self.0.mapv(|v| v / s))
        } else {
            self.clone()
        }
    }
}

/// Offset of a centered window of length `inner` inside `outer`.
#[inline]
pub fn center_offset(outer: usize, inner: usize) -> usize {
    (outer - inner) / 2
}

/// Centered crop of a 2D view.
pub fn crop_center<A>(a: ArrayView2<'_, A>, shape: (usize, usize)) -> Result<ArrayView2<'_, A>> {
    let (h, w) = a.dim();
    if shape.0 > h || shape.1 > w {
        return Err(Error::Shape(format!("crop {:?} larger than {:?}", shape, (h, w))));
    }
    let (oy, ox) = (center_offset(h, shape.0), center_offset(w, shape.1));
    Ok(a.slice_move(s![oy..oy + shape.0, ox..ox + shape.1]))
}

/// `sqrt(image^gamma)`: undoes display gamma, then intensity to amplitude.
pub fn amplitude_from_intensity<T: Scalar>(
    image: ArrayView2<'_, T>,
    gamma: f64,
) -> Result<AmplitudeMap<T>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if let Some(v) = image
        .iter()
        .find(|&&v| !(v >= T::zero() && v <= T::one()))
    {
        return Err(Error::Domain(format!("intensity {v} outside [0, 1]")));
    }
    let g = T::of(gamma);
    Ok(AmplitudeMap(image.mapv(|v| v.powf(g).sqrt())))
}
