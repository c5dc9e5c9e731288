//! YIN pitch tracking.
//!
//! Classic difference-function YIN: cumulative mean normalized difference,
//! absolute threshold, parabolic refinement of the dip. The integration
//! window is `sample_rate / fmin` samples and the analysis window twice that
//! (40 ms for the default 50 Hz floor), centered on each 5 ms frame and
//! shifted inward at the clip edges so every frame sees a full window.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::pitch::F0Contour;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrackerConfig {
    /// Extraction range in Hz. Candidates outside it are unvoiced.
    pub fmin: f64,
    pub fmax: f64,
    /// Aperiodicity threshold on the normalized difference dip.
    pub threshold: f64,
    /// Output frame rate in Hz.
    pub frame_rate: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            fmin: 50.0,
            fmax: 800.0,
            threshold: 0.15,
            frame_rate: 200,
        }
    }
}

/// Extract an f0 contour at `cfg.frame_rate`.
///
/// Requires `sample_rate >= 16000` and divisible by the frame rate. Clips
/// shorter than one analysis window produce an empty contour.
pub fn extract_f0(w: &Waveform, cfg: &TrackerConfig) -> F0Contour {
    assert!(w.sample_rate >= 16000, "tracker needs at least 16 kHz input");
    assert_eq!(
        w.sample_rate % cfg.frame_rate,
        0,
        "sample rate must be divisible by the frame rate"
    );
    let sr = w.sample_rate as f64;
    let hop = (w.sample_rate / cfg.frame_rate) as usize;
    let tau_max = (sr / cfg.fmin).floor() as usize;
    let tau_min = (sr / cfg.fmax).ceil() as usize;
    let window = 2 * tau_max;

    if w.len() < window {
        return F0Contour::empty(cfg.frame_rate as f64);
    }

    let num_frames = w.len().div_ceil(hop);
    let mut values = Vec::with_capacity(num_frames);
    let mut voiced = Vec::with_capacity(num_frames);
    let mut diff = vec![0.0f64; tau_max + 1];
    let mut cmnd = vec![0.0f64; tau_max + 1];

    for t in 0..num_frames {
        let center = t * hop + hop / 2;
        let start = center
            .saturating_sub(tau_max)
            .min(w.len() - window);
        let frame = &w.samples[start..start + window];
        match frame_pitch(frame, sr, tau_min, tau_max, cfg, &mut diff, &mut cmnd) {
            Some(f0) => {
                values.push(f0);
                voiced.push(true);
            }
            None => {
                values.push(0.0);
                voiced.push(false);
            }
        }
    }

    F0Contour {
        values,
        voiced,
        frame_rate: cfg.frame_rate as f64,
    }
}

fn frame_pitch(
    frame: &[f64],
    sr: f64,
    tau_min: usize,
    tau_max: usize,
    cfg: &TrackerConfig,
    diff: &mut [f64],
    cmnd: &mut [f64],
) -> Option<f64> {
    let w = tau_max;
    for tau in 1..=tau_max {
        let mut acc = 0.0;
        for i in 0..w {
            let d = frame[i] - frame[i + tau];
            acc += d * d;
        }
        diff[tau] = acc;
    }

    // Cumulative mean normalization. All-zero energy means silence.
    let mut running = 0.0;
    cmnd[0] = 1.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    // First dip under the threshold, then follow it down.
    let mut tau_est = None;
    let mut tau = tau_min.max(2);
    while tau <= tau_max {
        if cmnd[tau] < cfg.threshold {
            while tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            tau_est = Some(tau);
            break;
        }
        tau += 1;
    }
    let tau_est = tau_est?;

    let refined = parabolic(cmnd, tau_est, tau_max);
    let f0 = sr / refined;
    if f0 < cfg.fmin || f0 > cfg.fmax {
        return None;
    }
    Some(f0)
}

fn parabolic(cmnd: &[f64], tau: usize, tau_max: usize) -> f64 {
    if tau <= 1 || tau >= tau_max {
        return tau as f64;
    }
    let (s0, s1, s2) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
    let denom = s0 + s2 - 2.0 * s1;
    if denom.abs() < 1e-12 {
        return tau as f64;
    }
    let shift = 0.5 * (s0 - s2) / denom;
    tau as f64 + shift.clamp(-1.0, 1.0)
}
