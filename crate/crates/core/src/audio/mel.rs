//! Log-mel spectrogram analysis.
//!
//! Frames start at `t * hop` with zero padding past the signal end, so
//! `T = ceil(len / hop)` and appending silence never changes existing frames.
//! The filterbank uses HTK mel spacing with unit-height triangles; band
//! energies are floored before the natural log.
//!
//! Besides the forward analysis this module carries the adjoint of the whole
//! chain (window -> DFT -> magnitude -> filterbank -> log), which the
//! reconstruction loss uses to push gradients back into a waveform.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Analysis parameters. The 24 kHz defaults put the frame rate at 200 Hz,
/// matching the conditioning grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft: usize,
    pub win: usize,
    pub hop: usize,
    pub bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 24000,
            fft: 1024,
            win: 1024,
            hop: 120,
            bands: 80,
            fmin: 0.0,
            fmax: 12000.0,
            floor: 1e-5,
        }
    }
}

impl MelConfig {
    /// 16 kHz / 50 Hz analysis used by the pseudo content features. The
    /// window equals the hop so each frame sees a disjoint sample span.
    pub fn pseudo_16k() -> Self {
        MelConfig {
            sample_rate: 16000,
            fft: 512,
            win: 320,
            hop: 320,
            bands: 80,
            fmin: 0.0,
            fmax: 8000.0,
            floor: 1e-5,
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }
}

/// T x B matrix of log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub frame_rate: f64,
    pub bands: usize,
}

/// Precomputed window, filterbank and FFT plans for one [`MelConfig`].
pub struct MelAnalyzer {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Self {
        assert!(cfg.win <= cfg.fft, "window longer than FFT size");
        assert!(cfg.hop > 0 && cfg.bands > 0);
        let window: Vec<f64> = (0..cfg.win)
            .map(|n| {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / cfg.win as f64).cos())
            })
            .collect();
        let filters = mel_filterbank(&cfg);
        let mut planner = FftPlanner::new();
        MelAnalyzer {
            window,
            filters,
            fft_fwd: planner.plan_fft_forward(cfg.fft),
            fft_inv: planner.plan_fft_inverse(cfg.fft),
            cfg,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center frequency of each mel band in Hz.
    pub fn band_centers_hz(&self) -> Vec<f64> {
        let lo = hz_to_mel(self.cfg.fmin);
        let hi = hz_to_mel(self.cfg.fmax);
        let step = (hi - lo) / (self.cfg.bands + 1) as f64;
        (1..=self.cfg.bands)
            .map(|b| mel_to_hz(lo + step * b as f64))
            .collect()
    }

    pub fn analyze(&self, samples: &[f64]) -> MelSpectrogram {
        let t_frames = self.cfg.num_frames(samples.len());
        let mut frames = Array2::zeros((t_frames, self.cfg.bands));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft];
        for t in 0..t_frames {
            let (mags, _) = self.frame_magnitudes(samples, t, &mut buf);
            let energies = self.band_energies(&mags);
            for (b, &e) in energies.iter().enumerate() {
                frames[[t, b]] = e.max(self.cfg.floor).ln();
            }
        }
        MelSpectrogram {
            frames,
            frame_rate: self.cfg.frame_rate(),
            bands: self.cfg.bands,
        }
    }

    /// Mean absolute log-mel difference between two equal-length waveforms,
    /// together with its gradient in the second argument.
    pub fn l1_and_input_grad(&self, reference: &[f64], signal: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(reference.len(), signal.len());
        let mel_ref = self.analyze(reference);
        let t_frames = mel_ref.frames.nrows();
        let denom = (t_frames * self.cfg.bands) as f64;

        let mut loss = 0.0;
        let mut grad = vec![0.0; signal.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft];
        let half = self.cfg.fft / 2 + 1;

        for t in 0..t_frames {
            let (mags, spec) = self.frame_magnitudes(signal, t, &mut buf);
            let energies = self.band_energies(&mags);

            // d loss / d band-energy, through |.| and the floored log.
            let mut genergy = vec![0.0; self.cfg.bands];
            for b in 0..self.cfg.bands {
                let y = energies[b].max(self.cfg.floor).ln();
                let diff = y - mel_ref.frames[[t, b]];
                loss += diff.abs();
                // signum(0.0) is 1.0 in Rust; the subgradient at 0 is 0.
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                if energies[b] > self.cfg.floor {
                    genergy[b] = sign / denom / energies[b];
                }
            }

            // Through the filterbank and the magnitude.
            let mut gspec = vec![Complex::new(0.0, 0.0); self.cfg.fft];
            for f in 0..half {
                if mags[f] <= 0.0 {
                    continue;
                }
                let mut gmag = 0.0;
                for b in 0..self.cfg.bands {
                    gmag += self.filters[[b, f]] * genergy[b];
                }
                gspec[f] = Complex::new(
                    gmag * spec[f].re / mags[f],
                    gmag * spec[f].im / mags[f],
                );
            }

            // Adjoint of the one-sided DFT: unnormalized inverse transform of
            // the zero-extended gradient spectrum, real part only.
            self.fft_inv.process(&mut gspec);
            let start = t * self.cfg.hop;
            for n in 0..self.cfg.win {
                let s = start + n;
                if s < signal.len() {
                    grad[s] += gspec[n].re * self.window[n];
                }
            }
        }
        (loss / denom, grad)
    }

    fn frame_magnitudes(
        &self,
        samples: &[f64],
        t: usize,
        buf: &mut [Complex<f64>],
    ) -> (Vec<f64>, Vec<Complex<f64>>) {
        let start = t * self.cfg.hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = start + n;
            let x = if n < self.cfg.win && s < samples.len() {
                samples[s] * self.window[n]
            } else {
                0.0
            };
            *slot = Complex::new(x, 0.0);
        }
        self.fft_fwd.process(buf);
        let half = self.cfg.fft / 2 + 1;
        let spec = buf[..half].to_vec();
        let mags = spec.iter().map(|c| c.norm()).collect();
        (mags, spec)
    }

    fn band_energies(&self, mags: &[f64]) -> Vec<f64> {
        let half = self.cfg.fft / 2 + 1;
        (0..self.cfg.bands)
            .map(|b| {
                let mut acc = 0.0;
                for f in 0..half {
                    acc += self.filters[[b, f]] * mags[f];
                }
                acc
            })
            .collect()
    }
}

/// One-shot analysis helper.
pub fn mel_spectrogram(samples: &[f64], cfg: &MelConfig) -> MelSpectrogram {
    MelAnalyzer::new(cfg.clone()).analyze(samples)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let half = cfg.fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let points: Vec<f64> = (0..cfg.bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.bands + 1) as f64))
        .collect();
    let mut filters = Array2::zeros((cfg.bands, half));
    for b in 0..cfg.bands {
        let (left, center, right) = (points[b], points[b + 1], points[b + 2]);
        for f in 0..half {
            let hz = f as f64 * cfg.sample_rate as f64 / cfg.fft as f64;
            let w = if hz <= left || hz >= right {
                0.0
            } else if hz <= center {
                (hz - left) / (center - left)
            } else {
                (right - hz) / (right - center)
            };
            filters[[b, f]] = w;
        }
    }
    filters
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, rate: u32) -> Vec<f64> {
        (0..n)
            .map(|i| 0.6 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&vec![0.0; 1200], &cfg);
        assert_eq!(mel.frames.dim(), (10, 80));
        let floor = (1e-5f64).ln();
        for &v in mel.frames.iter() {
            assert_eq!(v, floor);
        }
    }

    #[test]
    fn one_second_is_200_frames() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&sine(440.0, 24000, 24000), &cfg);
        assert_eq!(mel.frames.nrows(), 200);
        assert_eq!(mel.frame_rate, 200.0);
    }

    #[test]
    fn pure_tone_peaks_at_nearest_band_center() {
        // Oracle: compute the filterbank's band centers directly and check
        // the strongest band is the one whose center is nearest the tone.
        let cfg = MelConfig::default();
        let analyzer = MelAnalyzer::new(cfg);
        let centers = analyzer.band_centers_hz();
        let mel = analyzer.analyze(&sine(1000.0, 24000, 24000));

        let mid = mel.frames.row(100);
        let argmax = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0)
                    .abs()
                    .partial_cmp(&(b.1 - 1000.0).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(argmax, nearest, "centers near 1 kHz: {:?}", &centers[argmax.min(nearest).saturating_sub(1)..=argmax.max(nearest) + 1]);
    }

    #[test]
    fn appending_silence_preserves_existing_frames() {
        let cfg = MelConfig::default();
        let wave = sine(523.0, 3000, 24000);
        let mut longer = wave.clone();
        longer.extend(std::iter::repeat(0.0).take(1200));
        let a = mel_spectrogram(&wave, &cfg);
        let b = mel_spectrogram(&longer, &cfg);
        let t = a.frames.nrows();
        for row in 0..t - 1 {
            for band in 0..a.bands {
                assert!((a.frames[[row, band]] - b.frames[[row, band]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let cfg = MelConfig {
            fft: 64,
            win: 64,
            hop: 16,
            bands: 8,
            fmax: 12000.0,
            ..MelConfig::default()
        };
        let analyzer = MelAnalyzer::new(cfg);
        // Silence as the reference keeps every band difference far from the
        // |.| kink, so central differences see a smooth function.
        let reference = vec![0.0; 96];
        let signal: Vec<f64> = (0..96)
            .map(|i| {
                0.4 * ((i * 7919 + 13) % 97) as f64 / 97.0
                    + 0.3 * (2.0 * std::f64::consts::PI * 1500.0 * i as f64 / 24000.0).sin()
            })
            .collect();
        let (_, grad) = analyzer.l1_and_input_grad(&reference, &signal);

        let h = 1e-6;
        for &i in &[0usize, 17, 40, 95] {
            let mut plus = signal.clone();
            plus[i] += h;
            let mut minus = signal.clone();
            minus[i] -= h;
            let (lp, _) = analyzer.l1_and_input_grad(&reference, &plus);
            let (lm, _) = analyzer.l1_and_input_grad(&reference, &minus);
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (numeric - grad[i]).abs() <= 1e-6 * (1.0 + numeric.abs().max(grad[i].abs())),
                "sample {i}: numeric {numeric} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn identical_signals_have_zero_loss_and_grad() {
        let analyzer = MelAnalyzer::new(MelConfig::default());
        let wave = sine(440.0, 2400, 24000);
        let (loss, grad) = analyzer.l1_and_input_grad(&wave, &wave);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}
