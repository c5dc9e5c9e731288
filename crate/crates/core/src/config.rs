//! The run config: every knob in one serializable, fingerprintable place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::MelConfig;
use crate::content::FeatureProvider;
use crate::error::{Error, Result};
use crate::f0enc::{EncoderDims, EncoderKind};
use crate::pitch::TrackerConfig;
use crate::vocoder::{DiscriminatorConfig, GeneratorConfig};

/// Optimization hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Learning-rate decay applied once per epoch (one pass over the clips).
    pub lr_decay: f64,
    pub lambda_recon: f64,
    pub lambda_fm: f64,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub steps: u64,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            lr_decay: 0.999,
            lambda_recon: 40.0,
            lambda_fm: 1.0,
            batch_size: 1,
            segment_frames: 32,
            steps: 2000,
            checkpoint_interval: 500,
        }
    }
}

/// Optional override of the global f0 normalization moments; when absent
/// they are pooled from the singer registry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PitchNormOverride {
    pub mean_hz: f64,
    pub std_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub singers: PathBuf,
    pub out_dir: PathBuf,
}

/// Everything a run needs. The checkpoint stores a hash of this whole
/// structure and refuses to resume across a mismatch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mel: MelConfig,
    pub tracker: TrackerConfig,
    pub encoder_kind: EncoderKind,
    pub encoder_dims: EncoderDims,
    pub content: FeatureProvider,
    pub singer_dim: usize,
    pub num_singers: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub pitch_norm: Option<PitchNormOverride>,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Desk-scale defaults: full encoder dims, 64 base channels, pseudo
    /// content at D = 64.
    pub fn desk(singers: usize) -> Self {
        let encoder_dims = EncoderDims::default();
        let content = FeatureProvider::Pseudo { dim: 64, seed: 0 };
        let singer_dim = 128;
        RunConfig {
            seed: 17,
            mel: MelConfig::default(),
            tracker: TrackerConfig::default(),
            encoder_kind: EncoderKind::Pbtc,
            encoder_dims,
            content: content.clone(),
            singer_dim,
            num_singers: singers,
            generator: GeneratorConfig {
                in_width: encoder_dims.dim + content.dim() + singer_dim,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            pitch_norm: None,
            paths: PathsConfig::default(),
        }
    }

    /// Overfit-harness preset: base_channels 32, D = 64 pseudo features,
    /// reduced encoder and singer widths.
    pub fn tiny() -> Self {
        let encoder_dims = EncoderDims {
            levels: 128,
            dim: 64,
            branches: 10,
            taps: 3,
        };
        let content = FeatureProvider::Pseudo { dim: 64, seed: 0 };
        let singer_dim = 32;
        RunConfig {
            seed: 17,
            mel: MelConfig::default(),
            tracker: TrackerConfig::default(),
            encoder_kind: EncoderKind::Pbtc,
            encoder_dims,
            content: content.clone(),
            singer_dim,
            num_singers: 2,
            generator: GeneratorConfig {
                base_channels: 32,
                in_width: encoder_dims.dim + content.dim() + singer_dim,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            pitch_norm: None,
            paths: PathsConfig::default(),
        }
    }

    /// Paper-faithful widths: rates [3, 4, 5, 8] at 50 Hz conditioning,
    /// 512 base channels, D = 1024 file features, full discriminators.
    pub fn paper_literal() -> Self {
        let encoder_dims = EncoderDims::default();
        let content = FeatureProvider::File { dim: 1024 };
        let singer_dim = 128;
        RunConfig {
            seed: 17,
            mel: MelConfig::default(),
            tracker: TrackerConfig::default(),
            encoder_kind: EncoderKind::Pbtc,
            encoder_dims,
            content: content.clone(),
            singer_dim,
            num_singers: 17,
            generator: GeneratorConfig::paper_literal(
                encoder_dims.dim + content.dim() + singer_dim,
            ),
            discriminator: DiscriminatorConfig::paper_literal(),
            train: TrainConfig::default(),
            pitch_norm: None,
            paths: PathsConfig::default(),
        }
    }

    pub fn conditioning_width(&self) -> usize {
        self.encoder_dims.dim + self.content.dim() + self.singer_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.in_width != self.conditioning_width() {
            return Err(Error::Config(format!(
                "generator input width {} != F + D + S = {}",
                self.generator.in_width,
                self.conditioning_width()
            )));
        }
        if self.mel.sample_rate != crate::vocoder::OUTPUT_RATE {
            return Err(Error::Config(
                "reconstruction mel must analyze at the 24 kHz output rate".into(),
            ));
        }
        if self.tracker.frame_rate % self.generator.conditioning_rate != 0 {
            return Err(Error::Config(format!(
                "tracker rate {} must be a multiple of the conditioning rate {}",
                self.tracker.frame_rate, self.generator.conditioning_rate
            )));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.train.segment_frames == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("degenerate training geometry".into()));
        }
        if self.num_singers == 0 {
            return Err(Error::Config("need at least one singer".into()));
        }
        Ok(())
    }

    /// Hash of the full config; stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn load_toml(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save_toml(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::desk(4).validate().unwrap();
        RunConfig::tiny().validate().unwrap();
        RunConfig::paper_literal().validate().unwrap();
    }

    #[test]
    fn default_weights_read_back() {
        let cfg = RunConfig::tiny();
        assert_eq!(cfg.train.lambda_recon, 40.0);
        assert_eq!(cfg.train.lambda_fm, 1.0);
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!((cfg.train.beta1, cfg.train.beta2), (0.8, 0.99));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut cfg = RunConfig::tiny();
        cfg.generator.in_width += 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let cfg = RunConfig::tiny();
        cfg.save_toml(&path).unwrap();
        let loaded = RunConfig::load_toml(&path).unwrap();
        assert_eq!(loaded, cfg);
        assert_eq!(loaded.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn fingerprint_tracks_changes() {
        let a = RunConfig::tiny();
        let mut b = a.clone();
        b.train.lambda_recon = 39.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
