//! Alternating GAN optimization, checkpointing and the single-clip overfit
//! harness.
//!
//! Each step runs one discriminator update followed by one generator update
//! on the same generated segment, HiFi-GAN style. All randomness derives
//! from `(run seed, step)` so a resumed run retraces the uninterrupted one
//! bit for bit.

mod checkpoint;
mod data;

use ndarray::{Array1, Array2, Array3};
use sha2::{Digest, Sha256};

use crate::audio::{resample, MelAnalyzer, Waveform};
use crate::config::RunConfig;
use crate::content::{pseudo_features, FeatureProvider};
use crate::error::{Error, Result};
use crate::f0enc::F0Encoder;
use crate::nn::{Adam, ParamSlot, Parameterized};
use crate::pitch::{compute_stats, extract_f0, F0Stats};
use crate::singer::{SingerEmbedding, SingerProfile, SingerRegistry};
use crate::vocoder::{
    assemble_conditioning, lsgan_d_loss, lsgan_g_loss, Discriminators, GanLosses, Generator,
};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{
    conditioning_bins, load_manifest, mix_seed, ClipKind, Dataset, ManifestEntry, PreparedClip,
    Segment,
};

/// All learnable state plus both optimizers.
pub struct TrainState {
    pub config: RunConfig,
    pub encoder: F0Encoder,
    pub singers: SingerEmbedding,
    pub generator: Generator,
    pub discriminators: Discriminators,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub step: u64,
    mel: MelAnalyzer,
}

/// The generator-side parameter partition: generator, f0 encoder and the
/// singer table update together; the discriminators are the other side.
struct GenPartition<'a> {
    generator: &'a mut Generator,
    encoder: &'a mut F0Encoder,
    singers: &'a mut SingerEmbedding,
}

impl Parameterized for GenPartition<'_> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.generator.for_each_param(f);
        self.encoder.for_each_param(f);
        self.singers.for_each_param(f);
    }
}

impl TrainState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let encoder = F0Encoder::init(config.encoder_kind, &config.encoder_dims, mix_seed(seed, 1));
        let singers = SingerEmbedding::init(config.num_singers, config.singer_dim, mix_seed(seed, 2));
        let generator = Generator::new(config.generator.clone(), mix_seed(seed, 3))?;
        let discriminators = Discriminators::new(&config.discriminator, mix_seed(seed, 4))?;
        let mel = MelAnalyzer::new(config.mel.clone());
        let opt_g = Adam::new(config.train.beta1, config.train.beta2);
        let opt_d = Adam::new(config.train.beta1, config.train.beta2);
        Ok(TrainState {
            config,
            encoder,
            singers,
            generator,
            discriminators,
            opt_g,
            opt_d,
            step: 0,
            mel,
        })
    }

    pub fn mel_analyzer(&self) -> &MelAnalyzer {
        &self.mel
    }

    /// Learning rate at a given step: one decay per epoch, an epoch being
    /// one pass over the clips.
    pub fn learning_rate(&self, step: u64, clips: usize) -> f64 {
        let epoch = step / clips.max(1) as u64;
        self.config.train.lr * self.config.train.lr_decay.powi(epoch as i32)
    }

    pub fn generator_partition_digest(&mut self) -> String {
        let mut part = GenPartition {
            generator: &mut self.generator,
            encoder: &mut self.encoder,
            singers: &mut self.singers,
        };
        digest_params(&mut part)
    }

    pub fn discriminator_digest(&mut self) -> String {
        digest_params(&mut self.discriminators)
    }

    /// Run the generator on one segment, returning the fake waveform, the
    /// generator cache and the conditioning block.
    fn generate(&self, seg: &Segment) -> Result<(Vec<f64>, crate::vocoder::GenCache)> {
        let f0_features = self.encoder.forward_bins(&seg.bins)?;
        let singer = self.singers.embed(seg.singer_id)?;
        let block = assemble_conditioning(f0_features.view(), seg.content.view(), singer)?;
        let (wave, cache) = self.generator.forward(&block)?;
        Ok((wave, cache))
    }

    /// One discriminator update then one generator update on a sampled
    /// batch. Returns the step's four losses (discriminator loss measured
    /// before its update, generator-side losses after, as is conventional).
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<GanLosses> {
        let batch = dataset.sample_batch(
            self.config.seed,
            self.step,
            self.config.train.batch_size,
        );
        let losses = self.train_step_on(&batch, dataset.len())?;
        Ok(losses)
    }

    /// The core alternating update on an explicit batch.
    pub fn train_step_on(&mut self, batch: &[Segment], clips_in_epoch: usize) -> Result<GanLosses> {
        let b = batch.len() as f64;
        let lr = self.learning_rate(self.step, clips_in_epoch);
        let (lambda_fm, lambda_recon) =
            (self.config.train.lambda_fm, self.config.train.lambda_recon);

        // Generate every fake once; both half-steps use it.
        let mut fakes = Vec::with_capacity(batch.len());
        for seg in batch {
            fakes.push(self.generate(seg)?);
        }

        // ---- Discriminator half-step ----
        let mut part_d_zero = &mut self.discriminators;
        part_d_zero.zero_grads();
        let mut adv_d = 0.0;
        for (seg, (fake, _)) in batch.iter().zip(&fakes) {
            let real = &seg.audio;
            let mpd_real = self.discriminators.mpd.forward_all(real);
            let mpd_fake = self.discriminators.mpd.forward_all(fake);
            for (i, (tr, tf)) in mpd_real.iter().zip(&mpd_fake).enumerate() {
                adv_d += lsgan_d_loss(tr.score_flat(), tf.score_flat()) / b;
                let n_r = tr.score.len() as f64;
                let n_f = tf.score.len() as f64;
                let g_r = tr.score.mapv(|s| 2.0 * (s - 1.0) / n_r / b);
                let g_f = tf.score.mapv(|s| 2.0 * s / n_f / b);
                self.discriminators.mpd.subs[i].backward(tr, &g_r, None);
                self.discriminators.mpd.subs[i].backward(tf, &g_f, None);
            }
            let msd_real = self.discriminators.msd.forward_all(real);
            let msd_fake = self.discriminators.msd.forward_all(fake);
            for i in 0..msd_real.traces.len() {
                let (tr, tf) = (&msd_real.traces[i], &msd_fake.traces[i]);
                adv_d += lsgan_d_loss(tr.score_flat(), tf.score_flat()) / b;
                let n_r = tr.score.len() as f64;
                let n_f = tf.score.len() as f64;
                let g_r = tr.score.mapv(|s| 2.0 * (s - 1.0) / n_r / b);
                let g_f = tf.score.mapv(|s| 2.0 * s / n_f / b);
                self.discriminators.msd.backward_sub(&msd_real, i, &g_r, None);
                self.discriminators.msd.backward_sub(&msd_fake, i, &g_f, None);
            }
        }
        if !adv_d.is_finite() {
            return Err(Error::Divergence { step: self.step });
        }
        self.opt_d.step(&mut self.discriminators, lr);

        // ---- Generator half-step (against the updated discriminator) ----
        {
            let mut part = GenPartition {
                generator: &mut self.generator,
                encoder: &mut self.encoder,
                singers: &mut self.singers,
            };
            part.zero_grads();
        }
        let mut adv_g = 0.0;
        let mut fm = 0.0;
        let mut mel_loss = 0.0;
        for (seg, (fake, cache)) in batch.iter().zip(&fakes) {
            let real = &seg.audio;
            let mut gwave = vec![0.0; fake.len()];

            let mpd_real = self.discriminators.mpd.forward_all(real);
            let mpd_fake = self.discriminators.mpd.forward_all(fake);
            for (i, (tr, tf)) in mpd_real.iter().zip(&mpd_fake).enumerate() {
                adv_g += lsgan_g_loss(tf.score_flat()) / b;
                let n_f = tf.score.len() as f64;
                let gscore = tf.score.mapv(|s| 2.0 * (s - 1.0) / n_f / b);
                let gfmaps: Vec<Array3<f64>> = tr
                    .fmaps()
                    .iter()
                    .zip(tf.fmaps())
                    .map(|(fr, ff)| {
                        let len = fr.len() as f64;
                        fm += fr
                            .iter()
                            .zip(ff.iter())
                            .map(|(a, bb)| (a - bb).abs())
                            .sum::<f64>()
                            / len
                            / b;
                        ndarray::Zip::from(*fr).and(ff).map_collect(|&a, &bb| {
                            lambda_fm * sign(bb - a) / len / b
                        })
                    })
                    .collect();
                let g = self.discriminators.mpd.subs[i].backward(tf, &gscore, Some(&gfmaps));
                for (dst, src) in gwave.iter_mut().zip(g) {
                    *dst += src;
                }
            }

            let msd_real = self.discriminators.msd.forward_all(real);
            let msd_fake = self.discriminators.msd.forward_all(fake);
            for i in 0..msd_fake.traces.len() {
                let (tr, tf) = (&msd_real.traces[i], &msd_fake.traces[i]);
                adv_g += lsgan_g_loss(tf.score_flat()) / b;
                let n_f = tf.score.len() as f64;
                let gscore = tf.score.mapv(|s| 2.0 * (s - 1.0) / n_f / b);
                let gfmaps: Vec<Array2<f64>> = tr
                    .fmaps()
                    .iter()
                    .zip(tf.fmaps())
                    .map(|(fr, ff)| {
                        let len = fr.len() as f64;
                        fm += fr
                            .iter()
                            .zip(ff.iter())
                            .map(|(a, bb)| (a - bb).abs())
                            .sum::<f64>()
                            / len
                            / b;
                        ndarray::Zip::from(*fr).and(ff).map_collect(|&a, &bb| {
                            lambda_fm * sign(bb - a) / len / b
                        })
                    })
                    .collect();
                let g = self
                    .discriminators
                    .msd
                    .backward_sub(&msd_fake, i, &gscore, Some(&gfmaps));
                for (dst, src) in gwave.iter_mut().zip(g) {
                    *dst += src;
                }
            }

            let (l_mel, gmel) = self.mel.l1_and_input_grad(real, fake);
            mel_loss += l_mel / b;
            for (dst, src) in gwave.iter_mut().zip(gmel) {
                *dst += lambda_recon * src / b;
            }

            // Through the generator and into the conditioning streams.
            let gblock = self.generator.backward(cache, &gwave);
            let f = self.encoder.dim();
            let d = seg.content.ncols();
            let gf0 = gblock.slice(ndarray::s![.., ..f]).to_owned();
            self.encoder.backward_bins(&seg.bins, &gf0);
            let gsinger: Array1<f64> = gblock
                .slice(ndarray::s![.., f + d..])
                .sum_axis(ndarray::Axis(0));
            self.singers.backward(seg.singer_id, &gsinger);
        }

        let losses = GanLosses {
            adv_d,
            adv_g,
            fm,
            mel: mel_loss,
        };
        if !losses.is_finite() {
            return Err(Error::Divergence { step: self.step });
        }

        let mut part = GenPartition {
            generator: &mut self.generator,
            encoder: &mut self.encoder,
            singers: &mut self.singers,
        };
        self.opt_g.step(&mut part, lr);

        self.step += 1;
        Ok(losses)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn digest_params(model: &mut dyn Parameterized) -> String {
    let mut hasher = Sha256::new();
    model.for_each_param(&mut |name, slot| {
        hasher.update(name.as_bytes());
        for v in slot.value.iter() {
            hasher.update(v.to_le_bytes());
        }
    });
    crate::config::hex_string(&hasher.finalize())
}

/// Train for `steps`, invoking `on_step` after each update.
pub fn train_loop(
    state: &mut TrainState,
    dataset: &Dataset,
    steps: u64,
    mut on_step: impl FnMut(u64, &GanLosses),
) -> Result<()> {
    for _ in 0..steps {
        let step_index = state.step;
        let losses = state.train_step(dataset)?;
        on_step(step_index, &losses);
    }
    Ok(())
}

/// Everything the overfit harness produced.
pub struct OverfitOutcome {
    pub mel_curve: Vec<f64>,
    pub state: TrainState,
    pub dataset: Dataset,
    pub registry: SingerRegistry,
}

/// Build a one-clip training set under the given config and overfit it.
///
/// The clip is registered under both singer ids (same audio, same stats) so
/// conversion toward a second trained identity stays exercisable. Returns
/// the per-step mel loss curve alongside the trained state.
pub fn overfit_single_clip(cfg: &RunConfig, clip: &Waveform) -> Result<OverfitOutcome> {
    let (registry, dataset) = single_clip_dataset(cfg, clip)?;
    let mut state = TrainState::new(cfg.clone())?;
    let mut mel_curve = Vec::with_capacity(cfg.train.steps as usize);
    train_loop(&mut state, &dataset, cfg.train.steps, |_, losses| {
        mel_curve.push(losses.mel);
    })?;
    Ok(OverfitOutcome {
        mel_curve,
        state,
        dataset,
        registry,
    })
}

/// Prepare the single-clip registry and dataset used by the overfit harness.
pub fn single_clip_dataset(cfg: &RunConfig, clip: &Waveform) -> Result<(SingerRegistry, Dataset)> {
    let wave24 = if clip.sample_rate == 24000 {
        clip.clone()
    } else {
        resample(clip, 24000)
    };
    let wave16 = resample(&wave24, 16000);

    let contour = extract_f0(&wave24, &cfg.tracker);
    let stats = compute_stats(std::slice::from_ref(&contour))?;
    if stats.std <= 0.0 {
        return Err(Error::ZeroStd);
    }

    let features = match &cfg.content {
        FeatureProvider::Pseudo { dim, seed } => pseudo_features(&wave16, *dim, *seed),
        FeatureProvider::File { .. } => {
            return Err(Error::Config(
                "the overfit harness needs the pseudo feature provider".into(),
            ))
        }
    };

    let profiles: Vec<SingerProfile> = (0..cfg.num_singers)
        .map(|id| SingerProfile {
            id,
            name: format!("overfit{id}"),
            stats,
        })
        .collect();
    let registry = SingerRegistry::new(profiles)?;
    let norm = global_norm_stats(cfg, &registry)?;

    let clips: Result<Vec<PreparedClip>> = (0..cfg.num_singers)
        .map(|id| {
            data::prepare_clip(
                &format!("overfit{id}"),
                &wave24,
                &contour,
                &features,
                id,
                &norm,
                cfg,
            )
        })
        .collect();
    let dataset = Dataset::new(clips?, cfg)?;
    Ok((registry, dataset))
}

/// Global f0 normalization moments: the config override if present,
/// otherwise pooled from the registry.
pub fn global_norm_stats(cfg: &RunConfig, registry: &SingerRegistry) -> Result<F0Stats> {
    if let Some(o) = &cfg.pitch_norm {
        if o.std_hz <= 0.0 {
            return Err(Error::ZeroStd);
        }
        return Ok(F0Stats {
            mean: o.mean_hz,
            std: o.std_hz,
            voiced_frames: 0,
        });
    }
    let pooled = registry.pooled_stats()?;
    if pooled.std <= 0.0 {
        return Err(Error::ZeroStd);
    }
    Ok(pooled)
}
