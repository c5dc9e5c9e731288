//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads 16-bit PCM and 32-bit IEEE float, mono or multi-channel (channel 0
//! is kept). Writes 16-bit PCM. The subset is deliberately small; the error
//! taxonomy (missing file / malformed header / unsupported encoding) is part
//! of the contract.

use std::fs;
use std::path::Path;

use crate::audio::Waveform;
use crate::error::{Error, Result};

const FMT_PCM: u16 = 1;
const FMT_IEEE_FLOAT: u16 = 3;

/// Load a WAV file as a mono waveform scaled into `[-1, 1]`.
///
/// 16-bit samples are scaled by 1/32768; float samples are taken as-is and
/// clamped into `[-1, 1]`. Stereo and wider files keep channel 0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |detail: &str| Error::MalformedWav {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(malformed("chunk extends past end of file"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if channels == 0 {
        return Err(malformed("zero channels"));
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let unsupported = |detail: String| Error::UnsupportedWav {
        path: path.to_path_buf(),
        detail,
    };
    let channels = channels as usize;
    let samples = match (format, bits) {
        (FMT_PCM, 16) => {
            let frame = 2 * channels;
            data.chunks_exact(frame)
                .map(|c| i16::from_le_bytes(c[0..2].try_into().unwrap()) as f64 / 32768.0)
                .collect()
        }
        (FMT_IEEE_FLOAT, 32) => {
            let frame = 4 * channels;
            data.chunks_exact(frame)
                .map(|c| {
                    (f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64).clamp(-1.0, 1.0)
                })
                .collect()
        }
        (f, b) => return Err(unsupported(format!("format tag {f}, {b} bits per sample"))),
    };

    Ok(Waveform::new(samples, rate))
}

/// Write a waveform as 16-bit PCM.
///
/// Samples outside `[-1, 1]` are an error rather than a silent clip, so a
/// saturated synthesis run cannot slip through unnoticed.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, &s) in w.samples.iter().enumerate() {
        if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
            return Err(Error::SampleOutOfRange { index: i, value: s });
        }
    }

    let data_len = (w.samples.len() * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&FMT_PCM.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&w.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        // Full-scale +1.0 lands on 32767; everything else rounds to the
        // nearest code. Either way the round-trip error stays within one LSB.
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
