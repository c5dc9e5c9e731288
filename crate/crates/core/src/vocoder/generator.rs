//! Conditioning-to-waveform generator.
//!
//! conv_pre -> [leaky -> transposed upsample -> multi-receptive-field
//! residual stack] per rate -> leaky -> conv_post -> tanh. Channel width
//! halves at each upsampling stage.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, leaky_relu_grad, Conv1d, ConvTranspose1d, ParamSlot, Parameterized};

use super::{ConditioningBlock, GeneratorConfig};

pub const LEAKY_SLOPE: f64 = 0.1;

/// One residual block: `dilations.len()` pairs of (dilated conv, unit conv),
/// each pair wrapped in leaky activations and a residual add.
#[derive(Debug, Clone)]
struct ResBlock {
    convs1: Vec<Conv1d>,
    convs2: Vec<Conv1d>,
}

struct PairCache {
    x: Array2<f64>,
    t1: Array2<f64>,
    t2: Array2<f64>,
    t3: Array2<f64>,
}

struct ResBlockCache {
    pairs: Vec<PairCache>,
}

impl ResBlock {
    fn new(channels: usize, kernel: usize, dilations: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let convs1 = dilations
            .iter()
            .map(|&d| Conv1d::same(channels, channels, kernel, d, rng))
            .collect();
        let convs2 = dilations
            .iter()
            .map(|_| Conv1d::same(channels, channels, kernel, 1, rng))
            .collect();
        ResBlock { convs1, convs2 }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ResBlockCache) {
        let mut x = x.clone();
        let mut pairs = Vec::with_capacity(self.convs1.len());
        for (c1, c2) in self.convs1.iter().zip(&self.convs2) {
            let t1 = leaky_relu(&x, LEAKY_SLOPE);
            let t2 = c1.forward(&t1);
            let t3 = leaky_relu(&t2, LEAKY_SLOPE);
            let t4 = c2.forward(&t3);
            let next = &x + &t4;
            pairs.push(PairCache { x, t1, t2, t3 });
            x = next;
        }
        (x, ResBlockCache { pairs })
    }

    fn backward(&mut self, cache: &ResBlockCache, gy: &Array2<f64>) -> Array2<f64> {
        let mut g = gy.clone();
        for ((c1, c2), pair) in self
            .convs1
            .iter_mut()
            .zip(&mut self.convs2)
            .zip(&cache.pairs)
            .rev()
        {
            let gt3 = c2.backward(&pair.t3, &g);
            let gt2 = leaky_relu_grad(&pair.t2, &gt3, LEAKY_SLOPE);
            let gt1 = c1.backward(&pair.t1, &gt2);
            let gx = leaky_relu_grad(&pair.x, &gt1, LEAKY_SLOPE);
            g += &gx;
        }
        g
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, c) in self.convs1.iter_mut().enumerate() {
            c.visit(&format!("{prefix}.c1_{i}"), f);
        }
        for (i, c) in self.convs2.iter_mut().enumerate() {
            c.visit(&format!("{prefix}.c2_{i}"), f);
        }
    }
}

/// Parallel residual blocks (one per kernel size), outputs averaged.
#[derive(Debug, Clone)]
struct Mrf {
    blocks: Vec<ResBlock>,
}

impl Mrf {
    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<ResBlockCache>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut sum: Option<Array2<f64>> = None;
        for block in &self.blocks {
            let (y, cache) = block.forward(x);
            caches.push(cache);
            sum = Some(match sum {
                None => y,
                Some(acc) => acc + y,
            });
        }
        let n = self.blocks.len() as f64;
        (sum.expect("at least one resblock") / n, caches)
    }

    fn backward(&mut self, caches: &[ResBlockCache], gy: &Array2<f64>) -> Array2<f64> {
        let scaled = gy / self.blocks.len() as f64;
        let mut gx: Option<Array2<f64>> = None;
        for (block, cache) in self.blocks.iter_mut().zip(caches) {
            let g = block.backward(cache, &scaled);
            gx = Some(match gx {
                None => g,
                Some(acc) => acc + g,
            });
        }
        gx.expect("at least one resblock")
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&format!("{prefix}.k{i}"), f);
        }
    }
}

struct StageCache {
    leaky_in: Array2<f64>,
    up_in: Array2<f64>,
    up_out: Array2<f64>,
    mrf: Vec<ResBlockCache>,
}

/// Forward-pass intermediates needed by the backward pass.
pub struct GenCache {
    x0: Array2<f64>,
    stages: Vec<StageCache>,
    post_leaky_in: Array2<f64>,
    post_in: Array2<f64>,
    wave: Vec<f64>,
}

impl GenCache {
    pub fn wave(&self) -> &[f64] {
        &self.wave
    }
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    conv_pre: Conv1d,
    ups: Vec<ConvTranspose1d>,
    mrfs: Vec<Mrf>,
    conv_post: Conv1d,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = Vec::with_capacity(cfg.upsample_rates.len());
        for i in 0..cfg.upsample_rates.len() {
            channels.push((cfg.base_channels >> (i + 1)).max(2));
        }

        let conv_pre = Conv1d::same(cfg.in_width, cfg.base_channels, 7, 1, &mut rng);
        let mut ups = Vec::new();
        let mut mrfs = Vec::new();
        let mut prev = cfg.base_channels;
        for (i, &rate) in cfg.upsample_rates.iter().enumerate() {
            ups.push(ConvTranspose1d::upsampler(prev, channels[i], rate, &mut rng));
            let blocks = cfg
                .resblock_kernels
                .iter()
                .map(|&k| ResBlock::new(channels[i], k, &cfg.resblock_dilations, &mut rng))
                .collect();
            mrfs.push(Mrf { blocks });
            prev = channels[i];
        }
        let conv_post = Conv1d::same(prev, 1, 7, 1, &mut rng);
        Ok(Generator {
            cfg,
            conv_pre,
            ups,
            mrfs,
            conv_post,
        })
    }

    /// Samples per conditioning frame.
    pub fn hop(&self) -> usize {
        self.cfg.hop()
    }

    /// Decode a waveform; the cache feeds [`Generator::backward`].
    pub fn forward(&self, block: &ConditioningBlock) -> Result<(Vec<f64>, GenCache)> {
        if block.width() != self.cfg.in_width {
            return Err(Error::WidthMismatch {
                expected: self.cfg.in_width,
                found: block.width(),
            });
        }
        // Channel-major copy of the conditioning.
        let x0 = block.matrix.t().as_standard_layout().to_owned();
        let mut x = self.conv_pre.forward(&x0);
        let mut stages = Vec::with_capacity(self.ups.len());
        for (up, mrf) in self.ups.iter().zip(&self.mrfs) {
            let leaky_in = x;
            let up_in = leaky_relu(&leaky_in, LEAKY_SLOPE);
            let up_out = up.forward(&up_in);
            let (y, mrf_cache) = mrf.forward(&up_out);
            stages.push(StageCache {
                leaky_in,
                up_in,
                up_out,
                mrf: mrf_cache,
            });
            x = y;
        }
        let post_leaky_in = x;
        let post_in = leaky_relu(&post_leaky_in, LEAKY_SLOPE);
        let out = self.conv_post.forward(&post_in);
        let wave: Vec<f64> = out.row(0).iter().map(|v| v.tanh()).collect();
        Ok((
            wave.clone(),
            GenCache {
                x0,
                stages,
                post_leaky_in,
                post_in,
                wave,
            },
        ))
    }

    /// Backprop from a waveform gradient down to the conditioning gradient,
    /// returned row-major (`T_r x width`). Parameter gradients accumulate.
    pub fn backward(&mut self, cache: &GenCache, gwave: &[f64]) -> Array2<f64> {
        assert_eq!(gwave.len(), cache.wave.len());
        let mut g = Array2::zeros((1, gwave.len()));
        for (i, (&gw, &w)) in gwave.iter().zip(&cache.wave).enumerate() {
            g[[0, i]] = gw * (1.0 - w * w);
        }
        let g = self.conv_post.backward(&cache.post_in, &g);
        let mut g = leaky_relu_grad(&cache.post_leaky_in, &g, LEAKY_SLOPE);
        for (stage, (up, mrf)) in cache
            .stages
            .iter()
            .zip(self.ups.iter_mut().zip(&mut self.mrfs))
            .rev()
        {
            let g_up_out = mrf.backward(&stage.mrf, &g);
            let g_up_in = up.backward(&stage.up_in, &g_up_out);
            g = leaky_relu_grad(&stage.leaky_in, &g_up_in, LEAKY_SLOPE);
        }
        let gx0 = self.conv_pre.backward(&cache.x0, &g);
        gx0.t().as_standard_layout().to_owned()
    }
}

impl Parameterized for Generator {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.conv_pre.visit("gen.pre", f);
        for (i, up) in self.ups.iter_mut().enumerate() {
            up.visit(&format!("gen.up{i}"), f);
        }
        for (i, mrf) in self.mrfs.iter_mut().enumerate() {
            mrf.visit(&format!("gen.mrf{i}"), f);
        }
        self.conv_post.visit("gen.post", f);
    }
}
