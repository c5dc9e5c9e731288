//! Content features standing in for self-supervised embeddings.
//!
//! Two providers share one contract: a `T_s x D` real matrix at 50 Hz.
//! The file provider reads containers produced offline by an external
//! model; the pseudo provider derives deterministic features from 16 kHz
//! audio (50 Hz mel analysis followed by a fixed seeded random projection),
//! so the whole pipeline trains without any external model.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MelAnalyzer, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::uniform_init;

pub const CONTENT_RATE: u32 = 50;

/// `T_s x D` features at 50 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentFeatures {
    pub matrix: Array2<f64>,
    pub rate: u32,
}

impl ContentFeatures {
    pub fn frames(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Which provider fills the content stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureProvider {
    /// Containers on disk, referenced by the data manifest.
    File { dim: usize },
    /// Deterministic stand-in computed from the waveform.
    Pseudo { dim: usize, seed: u64 },
}

impl FeatureProvider {
    pub fn dim(&self) -> usize {
        match self {
            FeatureProvider::File { dim } => *dim,
            FeatureProvider::Pseudo { dim, .. } => *dim,
        }
    }
}

/// Sidecar metadata for a feature container.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureMeta {
    pub rows: usize,
    pub dim: usize,
    pub rate: u32,
    pub source_model: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Write features as little-endian f32 row-major with a JSON sidecar.
pub fn save_features(
    f: &ContentFeatures,
    source_model: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(f.matrix.len() * 4);
    for &v in f.matrix.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = FeatureMeta {
        rows: f.frames(),
        dim: f.dim(),
        rate: f.rate,
        source_model: source_model.to_string(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&side, json).map_err(|e| Error::io(side.clone(), e))
}

/// Load a feature container, checking dimensionality and the 50 Hz rate.
pub fn load_features(path: impl AsRef<Path>, expected_dim: usize) -> Result<ContentFeatures> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let meta_bytes = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: FeatureMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::json(&side, e))?;

    if meta.dim != expected_dim {
        return Err(Error::DimMismatch {
            expected: expected_dim,
            found: meta.dim,
        });
    }
    if meta.rate != CONTENT_RATE {
        return Err(Error::RateMismatch {
            expected: CONTENT_RATE,
            found: meta.rate,
        });
    }

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.rows * meta.dim * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(meta.rows * meta.dim);
    for i in 0..meta.rows * meta.dim {
        let b: [u8; 4] = bytes[i * 4..i * 4 + 4].try_into().unwrap();
        data.push(f32::from_le_bytes(b) as f64);
    }
    Ok(ContentFeatures {
        matrix: Array2::from_shape_vec((meta.rows, meta.dim), data).unwrap(),
        rate: meta.rate,
    })
}

/// Deterministic pseudo features from 16 kHz audio.
///
/// 50 Hz mel analysis (window == hop == 320 so frames see disjoint sample
/// spans), log energies rescaled to roughly [0, 1], then a fixed seeded
/// random projection from 80 bands to `dim`.
pub fn pseudo_features(w: &Waveform, dim: usize, seed: u64) -> ContentFeatures {
    assert_eq!(w.sample_rate, 16000, "pseudo features want 16 kHz input");
    let cfg = MelConfig::pseudo_16k();
    let floor_log = cfg.floor.ln();
    let mel = MelAnalyzer::new(cfg).analyze(&w.samples);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Array2<f64> = uniform_init(ndarray::Ix2(mel.bands, dim), mel.bands, &mut rng);

    // Silence maps to 0, full-scale energies to about 1.
    let scaled = mel.frames.mapv(|v| (v - floor_log) / -floor_log);
    ContentFeatures {
        matrix: scaled.dot(&projection),
        rate: CONTENT_RATE,
    }
}

/// Upsample by integer-ratio frame repetition: output row `r*i + j` equals
/// input row `i` for `j` in `0..r`.
pub fn upsample_features(f: &ContentFeatures, target_rate: u32) -> Result<Array2<f64>> {
    if target_rate % f.rate != 0 {
        return Err(Error::NonIntegerRatio {
            from_rate: f.rate,
            to_rate: target_rate,
        });
    }
    let ratio = (target_rate / f.rate) as usize;
    let (rows, dim) = f.matrix.dim();
    let mut out = Array2::zeros((rows * ratio, dim));
    for i in 0..rows {
        for j in 0..ratio {
            out.row_mut(ratio * i + j).assign(&f.matrix.row(i));
        }
    }
    Ok(out)
}
