//! Hierarchical two-level VQ codec: complex hologram (plus target amplitude)
//! in, phase-only hologram out.

mod checkpoint;
mod data;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{prepare_sample, synthetic_corpus, synthetic_image, Sample};
pub use loss::{
    ms_ssim_scales_for, reconstruction_loss, watson_dft_loss, watson_weights, ReconContext, MS_SSIM_WEIGHTS,
    SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW, WATSON_CORNER,
};
pub use model::{Codec, Forward, Level, QuantMode};
pub use train::{HoloCodec, TrainLog};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture and rate settings of one codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecProfile {
    /// Bottom-level downsample factor (power of two).
    pub bottom_factor: usize,
    /// Top-level downsample factor, twice the bottom one.
    pub top_factor: usize,
    pub res_blocks: usize,
    /// Residual channel depth.
    pub channels: usize,
    pub latent_dim: usize,
    pub deformable_conv: bool,
    pub k_bottom: usize,
    pub k_top: usize,
}

impl CodecProfile {
    /// Desk-scale low-rate geometry (factors 4 / 8).
    pub fn desk() -> Self {
        Self {
            bottom_factor: 4,
            top_factor: 8,
            res_blocks: 2,
            channels: 32,
            latent_dim: 32,
            deformable_conv: false,
            k_bottom: 64,
            k_top: 64,
        }
    }

    /// Reduced desk profile for quick training runs.
    pub fn tiny() -> Self {
        Self {
            res_blocks: 1,
            channels: 16,
            latent_dim: 8,
            ..Self::desk()
        }
    }

    /// Smallest profile, for gradient checks.
    pub fn micro() -> Self {
        Self {
            res_blocks: 1,
            channels: 4,
            latent_dim: 4,
            k_bottom: 8,
            k_top: 8,
            ..Self::desk()
        }
    }

    /// Full-size "low" configuration (factors 4 / 8).
    pub fn full_low() -> Self {
        Self {
            bottom_factor: 4,
            top_factor: 8,
            res_blocks: 4,
            channels: 128,
            latent_dim: 128,
            deformable_conv: true,
            k_bottom: 4096,
            k_top: 4096,
        }
    }

    /// Full-size "ultra-low" configuration (factors 8 / 16).
    pub fn full_ultra_low() -> Self {
        Self {
            bottom_factor: 8,
            top_factor: 16,
            ..Self::full_low()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            "micro" => Ok(Self::micro()),
            "low" => Ok(Self::full_low()),
            "ultra-low" => Ok(Self::full_ultra_low()),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.bottom_factor;
        if f < 2 || !f.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("bottom factor {f} must be a power of two >= 2")));
        }
        if self.top_factor != 2 * f {
            return Err(Error::InvalidConfig(format!(
                "top factor {} must be twice the bottom factor {f}",
                self.top_factor
            )));
        }
        if self.res_blocks == 0 || self.latent_dim == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("residual blocks, channels and latent dim must be >= 1".into()));
        }
        for k in [self.k_bottom, self.k_top] {
            if k == 0 || k > crate::bitstream::MAX_CODEBOOK {
                return Err(Error::InvalidConfig(format!("codebook size {k} outside [1, 32768]")));
            }
        }
        Ok(())
    }

    /// Geometry id written into bitstreams: 0 for factors 4/8, 1 for 8/16.
    /// `log2` of the bottom factor; the profile byte of a stream.
    pub fn geometry_id(&self) -> u8 {
        self.bottom_factor.trailing_zeros() as u8
    }

    pub fn bottom_shape(&self, frame: (usize, usize)) -> (usize, usize) {
        (frame.0 / self.bottom_factor, frame.1 / self.bottom_factor)
    }

    pub fn top_shape(&self, frame: (usize, usize)) -> (usize, usize) {
        (frame.0 / self.top_factor, frame.1 / self.top_factor)
    }

    /// Frames must divide by the top factor.
    pub fn check_frame(&self, frame: (usize, usize)) -> Result<()> {
        let f = self.top_factor;
        if frame.0 == 0 || frame.1 == 0 || frame.0 % f != 0 || frame.1 % f != 0 {
            return Err(Error::Shape(format!("frame {frame:?} not divisible by {f}")));
        }
        Ok(())
    }
}

/// Weights of the composite reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mse: f64,
    pub msssim: f64,
    pub wfft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            msssim: 0.1,
            wfft: 0.025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mse, self.msssim, self.wfft];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative with one positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            stage1_epochs: 100,
            stage2_epochs: 20,
            learning_rate: 1e-4,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// Stage-1 learning rate of the desk-scale setup.
pub const DESK_LEARNING_RATE: f64 = 3e-3;
/// Stage-2 (adapter) learning rate of the desk-scale setup.
pub const DESK_ADAPTER_LEARNING_RATE: f64 = 1e-3;

impl TrainSchedule {
    /// 50 + 20 epochs at the desk-scale learning rate.
    pub fn desk() -> Self {
        Self {
            stage1_epochs: 50,
            learning_rate: DESK_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}
