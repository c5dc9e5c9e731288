//! Waveform I/O, resampling and mel analysis.
//!
//! The mel hop is 120 samples at 24 kHz so the analysis frame rate is 200 Hz,
//! the same grid the f0 tracker and the generator conditioning use. One grid
//! for everything keeps stream alignment trivial.

mod mel;
mod resample;
mod wav;

pub use mel::{MelAnalyzer, MelConfig, MelSpectrogram};
pub use resample::resample;
pub use wav::{load_wav, save_wav};

/// Mono waveform with its sample rate.
///
/// Samples are finite and within `[-1, 1]` for anything loaded from disk;
/// generator output satisfies the same bound through its tanh output stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
