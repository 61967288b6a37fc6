//! Phase-only hologram generation and rate-adaptive vector-quantized
//! hologram compression.

mod error;
mod scalar;

pub mod adapt;
pub mod bitstream;
pub mod codec;
pub mod evaluation;
pub mod nn;
pub mod optics;
pub mod retrieval;
pub mod transport;
pub mod vq;

pub use error::{Error, Result};
pub use scalar::{wrap_phase, Scalar};

/// Single-precision instantiations.
pub type Codebook32 = vq::Codebook<f32>;
pub type PhaseMap32 = optics::PhaseMap<f32>;
pub type AmplitudeMap32 = optics::AmplitudeMap<f32>;
pub type ComplexField32 = optics::ComplexField<f32>;
pub type HoloCodec32 = codec::HoloCodec<f32>;

/// Double-precision instantiations.
pub type Codebook64 = vq::Codebook<f64>;
pub type PhaseMap64 = optics::PhaseMap<f64>;
pub type AmplitudeMap64 = optics::AmplitudeMap<f64>;
pub type ComplexField64 = optics::ComplexField<f64>;
pub type HoloCodec64 = codec::HoloCodec<f64>;
