//! f0 contours: extraction, corpus statistics, normalization, quantization
//! and the on-disk cache container.

mod yin;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use yin::{extract_f0, TrackerConfig};

/// Per-frame fundamental frequency in Hz with a voicing mask.
///
/// Unvoiced frames carry 0; voiced frames lie inside the tracker range.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
    pub frame_rate: f64,
}

impl F0Contour {
    pub fn empty(frame_rate: f64) -> Self {
        F0Contour {
            values: Vec::new(),
            voiced: Vec::new(),
            frame_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
    }
}

/// Gaussian summary of a singer's voiced f0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub mean: f64,
    pub std: f64,
    pub voiced_frames: usize,
}

/// Quantized contour: bin 0 is reserved for unvoiced frames, voiced frames
/// map to `[1, levels - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedF0 {
    pub bins: Vec<usize>,
    pub levels: usize,
}

impl QuantizedF0 {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Pooled sample mean and population standard deviation over the voiced
/// frames of all contours. Needs at least two voiced frames.
pub fn compute_stats(contours: &[F0Contour]) -> Result<F0Stats> {
    let voiced: Vec<f64> = contours.iter().flat_map(|c| c.voiced_values()).collect();
    if voiced.len() < 2 {
        return Err(Error::InsufficientVoicedFrames {
            found: voiced.len(),
        });
    }
    let n = voiced.len() as f64;
    let mean = voiced.iter().sum::<f64>() / n;
    let var = voiced.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(F0Stats {
        mean,
        std: var.sqrt(),
        voiced_frames: voiced.len(),
    })
}

/// Map voiced frames to `[0, 1]`: z-score against `stats`, clamp at three
/// standard deviations, then affine. Unvoiced frames become `None`.
pub fn normalize_f0(c: &F0Contour, stats: &F0Stats) -> Result<Vec<Option<f64>>> {
    if stats.std <= 0.0 {
        return Err(Error::ZeroStd);
    }
    Ok(c.values
        .iter()
        .zip(&c.voiced)
        .map(|(&f, &v)| {
            v.then(|| {
                let z = ((f - stats.mean) / stats.std).clamp(-3.0, 3.0);
                (z + 3.0) / 6.0
            })
        })
        .collect())
}

/// Uniform quantization of normalized values into `levels` bins. Voiced
/// values land in `[1, levels - 1]`; `None` maps to the reserved bin 0.
pub fn quantize_f0(norm: &[Option<f64>], levels: usize) -> QuantizedF0 {
    assert!(levels >= 2, "need at least two bins");
    let bins = norm
        .iter()
        .map(|v| match v {
            Some(x) => {
                debug_assert!((0.0..=1.0).contains(x));
                1 + (x * (levels - 2) as f64).round() as usize
            }
            None => 0,
        })
        .collect();
    QuantizedF0 { bins, levels }
}

/// Center of a voiced bin in normalized [0, 1] coordinates. Bin 0 has no
/// center.
pub fn bin_center(bin: usize, levels: usize) -> Option<f64> {
    if bin == 0 || bin >= levels {
        return None;
    }
    if levels == 2 {
        // Single voiced bin covers all of [0, 1].
        return Some(0.5);
    }
    Some((bin - 1) as f64 / (levels - 2) as f64)
}

/// Invert [`normalize_f0`] for a single normalized value.
pub fn denormalize(x: f64, stats: &F0Stats) -> f64 {
    stats.mean + (x * 6.0 - 3.0) * stats.std
}

/// Sidecar metadata for an f0 cache file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct F0CacheMeta {
    pub frame_rate: f64,
    pub range: [f64; 2],
    pub tracker_params: TrackerConfig,
    pub count: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Write a contour as little-endian f32 values followed by u8 voicing flags,
/// with a JSON sidecar at `<path>.json`.
pub fn save_f0_cache(c: &F0Contour, tracker: &TrackerConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(c.len() * 5);
    for &v in &c.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &c.voiced {
        bytes.push(v as u8);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let meta = F0CacheMeta {
        frame_rate: c.frame_rate,
        range: [tracker.fmin, tracker.fmax],
        tracker_params: tracker.clone(),
        count: c.len(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let side = sidecar_path(path);
    fs::write(&side, json).map_err(|e| Error::io(side.clone(), e))
}

pub fn load_f0_cache(path: impl AsRef<Path>) -> Result<(F0Contour, F0CacheMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let meta_bytes = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: F0CacheMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::json(&side, e))?;

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.count * 5;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let b: [u8; 4] = bytes[i * 4..i * 4 + 4].try_into().unwrap();
        values.push(f32::from_le_bytes(b) as f64);
    }
    let voiced = bytes[meta.count * 4..meta.count * 5]
        .iter()
        .map(|&b| b != 0)
        .collect();
    Ok((
        F0Contour {
            values,
            voiced,
            frame_rate: meta.frame_rate,
        },
        meta,
    ))
}
