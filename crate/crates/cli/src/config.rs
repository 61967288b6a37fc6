//! Declarative run configuration (TOML). Every key is optional; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use holocodec::codec::{
    CodecProfile, LossWeights, TrainSchedule, DESK_ADAPTER_LEARNING_RATE, DESK_LEARNING_RATE,
};
use holocodec::optics::{
    OpticsConfig, CHANNEL_WAVELENGTHS, DEFAULT_GAMMA, DEFAULT_PAD_FACTOR, DEFAULT_PIXEL_PITCH, DESK_DISTANCE,
};
use holocodec::retrieval::DEFAULT_STEP_SIZE;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for every random choice; `--seed` overrides.
    pub seed: Option<u64>,
    /// 0 = red, 1 = green (default), 2 = blue.
    pub channel: u8,
    pub optics: OpticsBlock,
    pub profile: ProfileBlock,
    pub schedule: ScheduleBlock,
    pub loss: LossBlock,
    pub data: DataBlock,
    pub retrieval: RetrievalBlock,
    pub paths: PathsBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            channel: 1,
            optics: OpticsBlock::default(),
            profile: ProfileBlock::default(),
            schedule: ScheduleBlock::default(),
            loss: LossBlock::default(),
            data: DataBlock::default(),
            retrieval: RetrievalBlock::default(),
            paths: PathsBlock::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsBlock {
    /// Meters; defaults to the channel's wavelength.
    pub wavelength: Option<f64>,
    pub pixel_pitch: f64,
    pub distance: f64,
    pub pad_factor: f64,
    /// `[height, width]`; defaults to the whole frame.
    pub roi: Option<[usize; 2]>,
}

impl Default for OpticsBlock {
    fn default() -> Self {
        Self {
            wavelength: None,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            distance: DESK_DISTANCE,
            pad_factor: DEFAULT_PAD_FACTOR,
            roi: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileBlock {
    /// desk | tiny | micro | low | ultra-low
    pub preset: String,
    pub res_blocks: Option<usize>,
    pub channels: Option<usize>,
    pub latent_dim: Option<usize>,
    pub k_bottom: Option<usize>,
    pub k_top: Option<usize>,
    pub deformable_conv: Option<bool>,
}

impl Default for ProfileBlock {
    fn default() -> Self {
        Self {
            preset: "tiny".into(),
            res_blocks: None,
            channels: None,
            latent_dim: None,
            k_bottom: None,
            k_top: None,
            deformable_conv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleBlock {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub adapter_learning_rate: f64,
    pub batch_size: usize,
    pub adapter_hidden: usize,
    /// Target sizes for adapter training and export; empty = every power of
    /// two in the adapter range.
    pub adapter_sizes: Vec<usize>,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        let d = TrainSchedule::desk();
        Self {
            stage1_epochs: d.stage1_epochs,
            stage2_epochs: d.stage2_epochs,
            learning_rate: DESK_LEARNING_RATE,
            adapter_learning_rate: DESK_ADAPTER_LEARNING_RATE,
            batch_size: d.batch_size,
            adapter_hidden: holocodec::adapt::DEFAULT_HIDDEN,
            adapter_sizes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossBlock {
    pub mse: f64,
    pub msssim: f64,
    pub wfft: f64,
}

impl Default for LossBlock {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            mse: w.mse,
            msssim: w.msssim,
            wfft: w.wfft,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    /// Directory of PNG images; absent = procedural synthetic images.
    pub dir: Option<PathBuf>,
    pub synthetic_count: usize,
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic_count: 32,
            height: 64,
            width: 128,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalBlock {
    pub iterations: usize,
    pub step_size: f64,
}

impl Default for RetrievalBlock {
    fn default() -> Self {
        Self {
            iterations: 500,
            step_size: DEFAULT_STEP_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsBlock {
    pub checkpoint: PathBuf,
    pub books: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        Self {
            checkpoint: "holocodec.ravk".into(),
            books: "books".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.channel > 2 {
            return Err(format!("channel {} must be 0, 1 or 2", self.channel));
        }
        self.optics((self.data.height, self.data.width)).validate().map_err(|e| e.to_string())?;
        self.profile()?;
        self.schedule().validate().map_err(|e| e.to_string())?;
        self.weights().validate().map_err(|e| e.to_string())?;
        if !(self.data.gamma > 0.0) || self.data.height == 0 || self.data.width == 0 {
            return Err("data block needs positive gamma and frame size".into());
        }
        if !(self.schedule.adapter_learning_rate > 0.0) || self.schedule.adapter_hidden == 0 {
            return Err("adapter learning rate and hidden size must be positive".into());
        }
        Ok(())
    }

    pub fn optics(&self, frame: (usize, usize)) -> OpticsConfig {
        let o = &self.optics;
        OpticsConfig {
            wavelength: o.wavelength.unwrap_or(CHANNEL_WAVELENGTHS[self.channel as usize % 3]),
            pixel_pitch: o.pixel_pitch,
            distance: o.distance,
            pad_factor: o.pad_factor,
            roi: o.roi.map(|[h, w]| (h, w)).unwrap_or(frame),
        }
    }

    pub fn profile(&self) -> Result<CodecProfile, String> {
        let p = &self.profile;
        let base = CodecProfile::by_name(&p.preset).map_err(|e| e.to_string())?;
        let out = CodecProfile {
            res_blocks: p.res_blocks.unwrap_or(base.res_blocks),
            channels: p.channels.unwrap_or(base.channels),
            latent_dim: p.latent_dim.unwrap_or(base.latent_dim),
            k_bottom: p.k_bottom.unwrap_or(base.k_bottom),
            k_top: p.k_top.unwrap_or(base.k_top),
            deformable_conv: p.deformable_conv.unwrap_or(base.deformable_conv),
            ..base
        };
        out.validate().map_err(|e| e.to_string())?;
        Ok(out)
    }

    pub fn schedule(&self) -> TrainSchedule {
        let s = &self.schedule;
        TrainSchedule {
            stage1_epochs: s.stage1_epochs,
            stage2_epochs: s.stage2_epochs,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            seed: self.seed.unwrap_or(0),
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mse: self.loss.mse,
            msssim: self.loss.msssim,
            wfft: self.loss.wfft,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::parse("colour = 1").is_err());
        assert!(RunConfig::parse("[optics]\nfocal = 2.0").is_err());
        assert!(RunConfig::parse("[optics]\ndistance = nan").is_err());
        assert!(RunConfig::parse("[profile]\npreset = \"huge\"").is_err());
        assert!(RunConfig::parse("channel = 7").is_err());
        let cfg = RunConfig::parse("seed = 5\n[schedule]\nstage1_epochs = 3\n[profile]\nk_bottom = 32").unwrap();
        assert_eq!(cfg.seed, Some(5));
        assert_eq!(cfg.schedule().stage1_epochs, 3);
        assert_eq!(cfg.profile().unwrap().k_bottom, 32);
    }
}
