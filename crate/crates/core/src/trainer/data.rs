//! Training data: the JSONL manifest, clip preparation onto the
//! conditioning grid, and deterministic batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::config::RunConfig;
use crate::content::{upsample_features, ContentFeatures};
use crate::error::{Error, Result};
use crate::pitch::{normalize_f0, quantize_f0, F0Contour, F0Stats, QuantizedF0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipKind {
    Speech,
    Singing,
}

/// One line of the data manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub wav_path: PathBuf,
    pub singer_id: usize,
    pub kind: ClipKind,
    #[serde(default)]
    pub f0_cache: Option<PathBuf>,
    #[serde(default)]
    pub feature_cache: Option<PathBuf>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(line).map_err(|e| Error::json(path, e))?);
    }
    Ok(entries)
}

/// A clip aligned onto the conditioning grid: quantized f0 bins, upsampled
/// content rows and audio samples all trimmed to the same frame count.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub name: String,
    pub singer_id: usize,
    pub bins: QuantizedF0,
    pub content: Array2<f64>,
    pub audio: Vec<f64>,
    pub frames: usize,
}

/// Quantize a contour and decimate it onto the conditioning rate.
pub fn conditioning_bins(
    contour: &F0Contour,
    norm: &F0Stats,
    levels: usize,
    conditioning_rate: u32,
) -> Result<QuantizedF0> {
    let normalized = normalize_f0(contour, norm)?;
    let q = quantize_f0(&normalized, levels);
    let tracker_rate = contour.frame_rate as u32;
    if tracker_rate == conditioning_rate {
        return Ok(q);
    }
    assert_eq!(tracker_rate % conditioning_rate, 0);
    let k = (tracker_rate / conditioning_rate) as usize;
    Ok(QuantizedF0 {
        bins: q.bins.iter().step_by(k).copied().collect(),
        levels: q.levels,
    })
}

pub fn prepare_clip(
    name: &str,
    wave24: &Waveform,
    contour: &F0Contour,
    features: &ContentFeatures,
    singer_id: usize,
    norm: &F0Stats,
    cfg: &RunConfig,
) -> Result<PreparedClip> {
    assert_eq!(wave24.sample_rate, 24000);
    let rate = cfg.generator.conditioning_rate;
    let bins = conditioning_bins(contour, norm, cfg.encoder_dims.levels, rate)?;
    let content = upsample_features(features, rate)?;

    let t_f0 = bins.len();
    let t_content = content.nrows();
    if t_f0.abs_diff(t_content) > crate::vocoder::STREAM_TOLERANCE {
        return Err(Error::StreamMisalignment {
            f0_frames: t_f0,
            content_frames: t_content,
            tolerance: crate::vocoder::STREAM_TOLERANCE,
        });
    }
    let hop = cfg.generator.hop();
    let frames = t_f0.min(t_content).min(wave24.len() / hop);
    Ok(PreparedClip {
        name: name.to_string(),
        singer_id,
        bins: QuantizedF0 {
            bins: bins.bins[..frames].to_vec(),
            levels: bins.levels,
        },
        content: content.slice(ndarray::s![..frames, ..]).to_owned(),
        audio: wave24.samples[..frames * hop].to_vec(),
        frames,
    })
}

/// One training example: a segment-sized crop of a prepared clip.
#[derive(Debug, Clone)]
pub struct Segment {
    pub bins: QuantizedF0,
    pub content: Array2<f64>,
    pub singer_id: usize,
    pub audio: Vec<f64>,
}

/// The in-memory training set.
pub struct Dataset {
    clips: Vec<PreparedClip>,
    hop: usize,
    segment_frames: usize,
}

impl Dataset {
    pub fn new(clips: Vec<PreparedClip>, cfg: &RunConfig) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let segment_frames = cfg.train.segment_frames;
        for c in &clips {
            if c.frames < segment_frames {
                return Err(Error::Config(format!(
                    "clip {} has {} frames, shorter than segment_frames = {}",
                    c.name, c.frames, segment_frames
                )));
            }
        }
        Ok(Dataset {
            clips,
            hop: cfg.generator.hop(),
            segment_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[PreparedClip] {
        &self.clips
    }

    /// Deterministic per-step batch: the RNG is derived from (seed, step)
    /// alone, so resumed runs sample identically.
    pub fn sample_batch(&self, seed: u64, step: u64, batch_size: usize) -> Vec<Segment> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed_0000 + step));
        (0..batch_size)
            .map(|_| {
                let clip = &self.clips[rng.gen_range(0..self.clips.len())];
                let max_start = clip.frames - self.segment_frames;
                let start = if max_start == 0 {
                    0
                } else {
                    rng.gen_range(0..=max_start)
                };
                self.crop(clip, start)
            })
            .collect()
    }

    fn crop(&self, clip: &PreparedClip, start: usize) -> Segment {
        let end = start + self.segment_frames;
        Segment {
            bins: QuantizedF0 {
                bins: clip.bins.bins[start..end].to_vec(),
                levels: clip.bins.levels,
            },
            content: clip.content.slice(ndarray::s![start..end, ..]).to_owned(),
            singer_id: clip.singer_id,
            audio: clip.audio[start * self.hop..end * self.hop].to_vec(),
        }
    }
}

/// SplitMix-style seed derivation so every consumer gets an independent
/// stream from the one run seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
