//! Band-limited sample rate conversion with a Hann-windowed sinc kernel.

use crate::audio::Waveform;

const HALF_TAPS: f64 = 32.0;
const ROLLOFF: f64 = 0.95;

/// Resample to `target_rate` with windowed-sinc interpolation.
///
/// Output length is `round(len * target_rate / source_rate)`. The kernel
/// cutoff sits just below the lower of the two Nyquist frequencies, and the
/// operation is exactly linear in the input samples.
pub fn resample(w: &Waveform, target_rate: u32) -> Waveform {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == w.sample_rate {
        return w.clone();
    }

    let src_len = w.samples.len();
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let out_len = (src_len as f64 * ratio).round() as usize;

    // When downsampling, widen the window so the narrower sinc still gets
    // enough taps.
    let cutoff = 0.5 * ROLLOFF * ratio.min(1.0);
    let half_width = HALF_TAPS / ratio.min(1.0);

    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 / ratio;
        let lo = ((center - half_width).ceil() as i64).max(0) as usize;
        let hi = ((center + half_width).floor() as i64).min(src_len as i64 - 1);
        if hi < lo as i64 {
            out.push(0.0);
            continue;
        }
        let mut acc = 0.0;
        for i in lo..=hi as usize {
            let u = i as f64 - center;
            acc += w.samples[i] * kernel(u, cutoff, half_width);
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

fn kernel(u: f64, cutoff: f64, half_width: f64) -> f64 {
    let window = 0.5 * (1.0 + (std::f64::consts::PI * u / half_width).cos());
    2.0 * cutoff * sinc(2.0 * cutoff * u) * window
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, seconds: f64, rate: u32) -> Waveform {
        let n = (seconds * rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate)
    }

    fn dominant_bin_hz(w: &Waveform) -> f64 {
        let mut buf: Vec<Complex<f64>> = w
            .samples
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .collect();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        let half = buf.len() / 2;
        let (bin, _) = buf[..half]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        bin as f64 * w.sample_rate as f64 / buf.len() as f64
    }

    #[test]
    fn same_rate_is_identity() {
        let w = sine(440.0, 0.1, 24000);
        let r = resample(&w, 24000);
        assert_eq!(r.samples, w.samples);
    }

    #[test]
    fn length_follows_ratio() {
        let w = sine(440.0, 1.0, 24000);
        let r = resample(&w, 16000);
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate, 16000);
    }

    #[test]
    fn sine_survives_downsampling() {
        // FFT oracle: the dominant bin of the resampled signal stays at the
        // sine frequency to within one bin.
        let w = sine(440.0, 1.0, 24000);
        let r = resample(&w, 16000);
        let bin_hz = 16000.0 / r.len() as f64;
        let peak = dominant_bin_hz(&r);
        assert!(
            (peak - 440.0).abs() <= bin_hz + 1e-9,
            "peak at {peak} Hz, expected 440 ± {bin_hz}"
        );
    }

    #[test]
    fn resample_is_linear_in_amplitude() {
        let w = sine(330.0, 0.25, 24000);
        let scaled = Waveform::new(w.samples.iter().map(|s| s * 0.37).collect(), 24000);
        let a = resample(&scaled, 16000);
        let b = resample(&w, 16000);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - 0.37 * y).abs() < 1e-9);
        }
    }
}
