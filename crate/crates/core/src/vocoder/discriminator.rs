//! Multi-Period and Multi-Scale discriminators.
//!
//! MPD: five sub-discriminators, one per period in [2, 3, 5, 7, 11]. The
//! waveform is right-padded (reflect) to a multiple of the period, reshaped
//! to a (len/p) x p map and run through strided 2-D convolutions over the
//! time axis. MSD: three sub-discriminators on the raw, x2- and x4-pooled
//! signal. Every post-activation map plus the final score map is recorded
//! as a feature map for the matching loss.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{leaky_relu, leaky_relu_grad, AvgPool1d, Conv1d, Conv2d, ParamSlot, Parameterized};

use super::DiscriminatorConfig;

const LEAKY_SLOPE: f64 = 0.1;

/// Padded length and row count of the period reshape.
pub fn mpd_geometry(len: usize, period: usize) -> (usize, usize) {
    let padded = len.div_ceil(period) * period;
    (padded, padded / period)
}

/// Right reflect padding to a multiple of `period`, reshaped to
/// `(1, rows, period)`.
fn pad_and_reshape(wave: &[f64], period: usize) -> Array3<f64> {
    let (padded, rows) = mpd_geometry(wave.len(), period);
    let mut data = Vec::with_capacity(padded);
    data.extend_from_slice(wave);
    for k in 0..padded - wave.len() {
        let src = wave.len().saturating_sub(2 + k).min(wave.len() - 1);
        data.push(wave[src]);
    }
    Array3::from_shape_vec((1, rows, period), data).unwrap()
}

/// Adjoint of [`pad_and_reshape`]: fold padded-position gradients back onto
/// their reflect sources.
fn unpad_gradient(g: &Array3<f64>, orig_len: usize) -> Vec<f64> {
    let flat = g.as_slice().expect("standard layout");
    let mut out = flat[..orig_len].to_vec();
    for (k, &gv) in flat[orig_len..].iter().enumerate() {
        let src = orig_len.saturating_sub(2 + k).min(orig_len - 1);
        out[src] += gv;
    }
    out
}

/// One period sub-discriminator.
pub struct PeriodDiscriminator {
    pub period: usize,
    convs: Vec<Conv2d>,
    post: Conv2d,
}

/// Forward intermediates of one period sub-discriminator.
pub struct MpdTrace {
    orig_len: usize,
    input: Array3<f64>,
    pre_acts: Vec<Array3<f64>>,
    acts: Vec<Array3<f64>>,
    pub score: Array3<f64>,
}

impl MpdTrace {
    /// Post-activation maps plus the score map.
    pub fn fmaps(&self) -> Vec<&Array3<f64>> {
        self.acts.iter().chain(std::iter::once(&self.score)).collect()
    }

    pub fn score_flat(&self) -> &[f64] {
        self.score.as_slice().expect("standard layout")
    }
}

impl PeriodDiscriminator {
    fn new(period: usize, channels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut prev = 1;
        for &ch in channels {
            convs.push(Conv2d::new(prev, ch, (5, 1), (3, 1), (2, 0), rng));
            prev = ch;
        }
        convs.push(Conv2d::new(prev, prev, (5, 1), (1, 1), (2, 0), rng));
        let post = Conv2d::new(prev, 1, (3, 1), (1, 1), (1, 0), rng);
        PeriodDiscriminator {
            period,
            convs,
            post,
        }
    }

    pub fn forward(&self, wave: &[f64]) -> MpdTrace {
        assert!(!wave.is_empty());
        let input = pad_and_reshape(wave, self.period);
        let mut x = input.clone();
        let mut pre_acts = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(&x);
            let act = leaky_relu(&pre, LEAKY_SLOPE);
            pre_acts.push(pre);
            x = act.clone();
            acts.push(act);
        }
        let score = self.post.forward(&x);
        MpdTrace {
            orig_len: wave.len(),
            input,
            pre_acts,
            acts,
            score,
        }
    }

    /// Backward from score (and optional per-fmap) gradients to the waveform
    /// gradient. `gfmaps`, when given, must match `trace.fmaps()` order.
    pub fn backward(
        &mut self,
        trace: &MpdTrace,
        gscore: &Array3<f64>,
        gfmaps: Option<&[Array3<f64>]>,
    ) -> Vec<f64> {
        let n = self.convs.len();
        let mut gscore_total = gscore.clone();
        if let Some(gf) = gfmaps {
            assert_eq!(gf.len(), n + 1);
            gscore_total += &gf[n];
        }
        let last_in = &trace.acts[n - 1];
        let mut gact = self.post.backward(last_in, &gscore_total);
        for i in (0..n).rev() {
            if let Some(gf) = gfmaps {
                gact += &gf[i];
            }
            let gpre = leaky_relu_grad(&trace.pre_acts[i], &gact, LEAKY_SLOPE);
            let conv_in = if i == 0 { &trace.input } else { &trace.acts[i - 1] };
            gact = self.convs[i].backward(conv_in, &gpre);
        }
        unpad_gradient(&gact, trace.orig_len)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit(&format!("{prefix}.c{i}"), f);
        }
        self.post.visit(&format!("{prefix}.post"), f);
    }
}

/// Bank of period discriminators.
pub struct MultiPeriodDiscriminator {
    pub subs: Vec<PeriodDiscriminator>,
}

impl MultiPeriodDiscriminator {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let subs = cfg
            .mpd_periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(p, &cfg.mpd_channels, rng))
            .collect();
        MultiPeriodDiscriminator { subs }
    }

    pub fn forward_all(&self, wave: &[f64]) -> Vec<MpdTrace> {
        self.subs.iter().map(|s| s.forward(wave)).collect()
    }
}

/// One scale sub-discriminator (plain 1-D conv stack).
pub struct ScaleDiscriminator {
    convs: Vec<Conv1d>,
    post: Conv1d,
}

pub struct MsdTrace {
    input_len: usize,
    pre_acts: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    pub score: Array2<f64>,
}

impl MsdTrace {
    pub fn fmaps(&self) -> Vec<&Array2<f64>> {
        self.acts.iter().chain(std::iter::once(&self.score)).collect()
    }

    pub fn score_flat(&self) -> &[f64] {
        self.score.as_slice().expect("standard layout")
    }
}

impl ScaleDiscriminator {
    fn new(layers: &[(usize, usize, usize, usize)], rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut prev = 1;
        for &(out, kernel, stride, groups) in layers {
            let padding = (kernel - 1) / 2;
            convs.push(Conv1d::new(
                prev, out, kernel, stride, 1, padding, groups, rng,
            ));
            prev = out;
        }
        let post = Conv1d::new(prev, 1, 3, 1, 1, 1, 1, rng);
        ScaleDiscriminator { convs, post }
    }

    fn forward(&self, x: &Array2<f64>) -> MsdTrace {
        let input_len = x.ncols();
        let mut cur = x.clone();
        let mut pre_acts = Vec::new();
        let mut acts = Vec::new();
        for conv in &self.convs {
            let pre = conv.forward(&cur);
            let act = leaky_relu(&pre, LEAKY_SLOPE);
            pre_acts.push(pre);
            cur = act.clone();
            acts.push(act);
        }
        let score = self.post.forward(&cur);
        MsdTrace {
            input_len,
            pre_acts,
            acts,
            score,
        }
    }

    fn backward(
        &mut self,
        input: &Array2<f64>,
        trace: &MsdTrace,
        gscore: &Array2<f64>,
        gfmaps: Option<&[Array2<f64>]>,
    ) -> Array2<f64> {
        let n = self.convs.len();
        let mut gscore_total = gscore.clone();
        if let Some(gf) = gfmaps {
            assert_eq!(gf.len(), n + 1);
            gscore_total += &gf[n];
        }
        let mut gact = self.post.backward(&trace.acts[n - 1], &gscore_total);
        for i in (0..n).rev() {
            if let Some(gf) = gfmaps {
                gact += &gf[i];
            }
            let gpre = leaky_relu_grad(&trace.pre_acts[i], &gact, LEAKY_SLOPE);
            let conv_in = if i == 0 { input } else { &trace.acts[i - 1] };
            gact = self.convs[i].backward(conv_in, &gpre);
        }
        assert_eq!(gact.ncols(), trace.input_len);
        gact
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit(&format!("{prefix}.c{i}"), f);
        }
        self.post.visit(&format!("{prefix}.post"), f);
    }
}

/// Bank of scale discriminators plus its forward trace.
pub struct MultiScaleDiscriminator {
    pub subs: Vec<ScaleDiscriminator>,
    pool: AvgPool1d,
}

pub struct MsdBankTrace {
    /// Input seen by each sub: raw, then pooled once per extra scale.
    pooled: Vec<Array2<f64>>,
    pub traces: Vec<MsdTrace>,
}

impl MsdBankTrace {
    pub fn scores(&self) -> Vec<&Array2<f64>> {
        self.traces.iter().map(|t| &t.score).collect()
    }
}

impl MultiScaleDiscriminator {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let subs = cfg
            .msd_scales
            .iter()
            .map(|_| ScaleDiscriminator::new(&cfg.msd_layers, rng))
            .collect();
        MultiScaleDiscriminator {
            subs,
            pool: AvgPool1d {
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        }
    }

    pub fn pool(&self) -> AvgPool1d {
        self.pool
    }

    pub fn forward_all(&self, wave: &[f64]) -> MsdBankTrace {
        assert!(!wave.is_empty());
        let mut pooled = Vec::with_capacity(self.subs.len());
        let mut x = Array2::from_shape_vec((1, wave.len()), wave.to_vec()).unwrap();
        for i in 0..self.subs.len() {
            if i > 0 {
                x = self.pool.forward(&x);
            }
            pooled.push(x.clone());
        }
        let traces = self
            .subs
            .iter()
            .zip(&pooled)
            .map(|(s, x)| s.forward(x))
            .collect();
        MsdBankTrace { pooled, traces }
    }

    /// Backward for one sub, chaining through the pooling stages back to the
    /// raw waveform.
    pub fn backward_sub(
        &mut self,
        bank: &MsdBankTrace,
        sub_index: usize,
        gscore: &Array2<f64>,
        gfmaps: Option<&[Array2<f64>]>,
    ) -> Vec<f64> {
        let input = &bank.pooled[sub_index];
        let mut g = self.subs[sub_index].backward(input, &bank.traces[sub_index], gscore, gfmaps);
        for level in (1..=sub_index).rev() {
            let upstream_len = bank.pooled[level - 1].ncols();
            g = self.pool.backward(upstream_len, &g);
        }
        g.into_raw_vec()
    }
}

/// Both discriminator banks under one parameter partition.
pub struct Discriminators {
    pub mpd: MultiPeriodDiscriminator,
    pub msd: MultiScaleDiscriminator,
}

impl Discriminators {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Discriminators {
            mpd: MultiPeriodDiscriminator::new(cfg, &mut rng),
            msd: MultiScaleDiscriminator::new(cfg, &mut rng),
        })
    }
}

impl Parameterized for Discriminators {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, sub) in self.mpd.subs.iter_mut().enumerate() {
            sub.visit(&format!("mpd.{i}"), f);
        }
        for (i, sub) in self.msd.subs.iter_mut().enumerate() {
            sub.visit(&format!("msd.{i}"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_init;

    fn small_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            mpd_channels: vec![2, 4],
            msd_layers: vec![(2, 15, 1, 1), (4, 41, 2, 2), (4, 5, 1, 1)],
            ..DiscriminatorConfig::default()
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform_init(ndarray::Ix1(n), 1, &mut rng).to_vec()
    }

    #[test]
    fn reshape_geometry() {
        assert_eq!(mpd_geometry(1200, 3), (1200, 400));
        assert_eq!(mpd_geometry(1201, 2), (1202, 601));
        assert_eq!(mpd_geometry(1200, 7), (1204, 172));
        let map = pad_and_reshape(&noise(1200, 1), 3);
        assert_eq!(map.dim(), (1, 400, 3));
    }

    #[test]
    fn reshape_strides_samples() {
        // Column c of the map holds samples c, c+p, c+2p, ...
        let wave: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let map = pad_and_reshape(&wave, 3);
        assert_eq!(map[[0, 0, 0]], 0.0);
        assert_eq!(map[[0, 0, 2]], 2.0);
        assert_eq!(map[[0, 1, 0]], 3.0);
        assert_eq!(map[[0, 3, 2]], 11.0);
    }

    #[test]
    fn default_bank_sizes() {
        let d = Discriminators::new(&small_cfg(), 7).unwrap();
        assert_eq!(d.mpd.subs.len(), 5);
        let periods: Vec<usize> = d.mpd.subs.iter().map(|s| s.period).collect();
        assert_eq!(periods, vec![2, 3, 5, 7, 11]);
        assert_eq!(d.msd.subs.len(), 3);
    }

    #[test]
    fn zero_input_gives_finite_scores() {
        let d = Discriminators::new(&small_cfg(), 7).unwrap();
        let wave = vec![0.0; 1200];
        for trace in d.mpd.forward_all(&wave) {
            assert!(trace.score_flat().iter().all(|s| s.is_finite()));
        }
        let bank = d.msd.forward_all(&wave);
        assert_eq!(bank.traces.len(), 3);
        for t in &bank.traces {
            assert!(t.score_flat().iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn msd_scale_lengths_follow_pooling_arithmetic() {
        let d = Discriminators::new(&small_cfg(), 7).unwrap();
        let bank = d.msd.forward_all(&noise(3840, 2));
        assert_eq!(bank.pooled[0].ncols(), 3840);
        assert_eq!(bank.pooled[1].ncols(), (3840 + 2 - 4) / 2 + 1);
        assert_eq!(bank.pooled[2].ncols(), 960);
    }

    #[test]
    fn every_sub_produces_input_gradients() {
        let mut d = Discriminators::new(&small_cfg(), 19).unwrap();
        let wave = noise(900, 3);
        for i in 0..5 {
            let trace = d.mpd.subs[i].forward(&wave);
            let gscore = Array3::from_elem(trace.score.raw_dim(), 1.0);
            let g = d.mpd.subs[i].backward(&trace, &gscore, None);
            let norm: f64 = g.iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "mpd sub {i} has zero input gradient");
        }
        let bank = d.msd.forward_all(&wave);
        for i in 0..3 {
            let gscore = Array2::from_elem(bank.traces[i].score.raw_dim(), 1.0);
            let g = d.msd.backward_sub(&bank, i, &gscore, None);
            assert_eq!(g.len(), 900);
            let norm: f64 = g.iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "msd sub {i} has zero input gradient");
        }
    }

    #[test]
    fn mpd_input_gradient_matches_finite_differences() {
        // Covers the reflect-pad adjoint: length 10 at period 3 pads by 2.
        let mut d = Discriminators::new(&small_cfg(), 11).unwrap();
        let wave = noise(10, 5);
        let sub = &mut d.mpd.subs[1];
        assert_eq!(sub.period, 3);
        let trace = sub.forward(&wave);
        let coef = {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            uniform_init(trace.score.raw_dim(), 1, &mut rng)
        };
        let g = sub.backward(&trace, &coef, None);

        let loss = |sub: &PeriodDiscriminator, w: &[f64]| {
            let t = sub.forward(w);
            t.score
                .iter()
                .zip(coef.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let h = 1e-6;
        for i in [0usize, 4, 8, 9] {
            let mut wp = wave.clone();
            wp[i] += h;
            let lp = loss(sub, &wp);
            wp[i] = wave[i] - h;
            let lm = loss(sub, &wp);
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (numeric - g[i]).abs() < 1e-7,
                "sample {i}: numeric {numeric} vs analytic {}",
                g[i]
            );
        }
    }

    #[test]
    fn msd_fmap_gradients_match_finite_differences() {
        // Push gradients through a feature map (not just the score) to cover
        // the feature-matching path, including the pooled second scale.
        let mut d = Discriminators::new(&small_cfg(), 23).unwrap();
        let wave = noise(64, 6);
        let bank = d.msd.forward_all(&wave);
        let sub_index = 1;
        let fmaps = bank.traces[sub_index].fmaps();
        let coefs: Vec<Array2<f64>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            fmaps
                .iter()
                .map(|m| uniform_init(m.raw_dim(), 1, &mut rng))
                .collect()
        };
        let gscore = Array2::zeros(bank.traces[sub_index].score.raw_dim());
        let g = d.msd.backward_sub(&bank, sub_index, &gscore, Some(&coefs));

        let loss = |msd: &MultiScaleDiscriminator, w: &[f64]| {
            let bank = msd.forward_all(w);
            bank.traces[sub_index]
                .fmaps()
                .iter()
                .zip(&coefs)
                .map(|(m, c)| m.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
        };
        let h = 1e-6;
        for i in [0usize, 13, 40, 63] {
            let mut wp = wave.clone();
            wp[i] += h;
            let lp = loss(&d.msd, &wp);
            wp[i] = wave[i] - h;
            let lm = loss(&d.msd, &wp);
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (numeric - g[i]).abs() < 1e-7,
                "sample {i}: numeric {numeric} vs analytic {}",
                g[i]
            );
        }
    }
}
