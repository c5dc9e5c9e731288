//! Least-squares GAN losses, feature matching, and the mel reconstruction
//! term.
//!
//! Per sub-discriminator: `L_adv_D = mean[(D(real) - 1)^2] + mean[D(fake)^2]`
//! and `L_adv_G = mean[(D(fake) - 1)^2]`, summed over the bank. Feature
//! matching is the L1 distance between real and fake feature maps, summed
//! over subs and layers. The total generator objective is
//! `L_adv_G + lambda_fm * L_fm + lambda_recon * L_mel`.

use crate::audio::MelAnalyzer;
use crate::error::{Error, Result};

use super::Discriminators;

/// Discriminator objective for one sub's flattened scores.
pub fn lsgan_d_loss(real_scores: &[f64], fake_scores: &[f64]) -> f64 {
    let r: f64 = real_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum();
    let f: f64 = fake_scores.iter().map(|s| s * s).sum();
    r / real_scores.len() as f64 + f / fake_scores.len() as f64
}

/// Generator adversarial objective for one sub's flattened scores.
pub fn lsgan_g_loss(fake_scores: &[f64]) -> f64 {
    let f: f64 = fake_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum();
    f / fake_scores.len() as f64
}

/// Mean absolute difference between two equally shaped feature maps.
fn fmap_l1<'a>(
    real: impl Iterator<Item = &'a f64>,
    fake: impl Iterator<Item = &'a f64>,
    len: usize,
) -> f64 {
    real.zip(fake).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64
}

/// The four training losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub adv_d: f64,
    pub adv_g: f64,
    pub fm: f64,
    pub mel: f64,
}

impl GanLosses {
    pub fn is_finite(&self) -> bool {
        self.adv_d.is_finite()
            && self.adv_g.is_finite()
            && self.fm.is_finite()
            && self.mel.is_finite()
    }

    /// Weighted generator objective.
    pub fn generator_total(&self, lambda_fm: f64, lambda_recon: f64) -> f64 {
        self.adv_g + lambda_fm * self.fm + lambda_recon * self.mel
    }
}

/// Evaluate all four losses for a (real, fake) pair. Pure evaluation; no
/// gradients are produced.
pub fn gan_losses(
    disc: &Discriminators,
    mel: &MelAnalyzer,
    real: &[f64],
    fake: &[f64],
) -> Result<GanLosses> {
    if real.len() != fake.len() {
        return Err(Error::LengthMismatch {
            left: real.len(),
            right: fake.len(),
        });
    }

    let mut adv_d = 0.0;
    let mut adv_g = 0.0;
    let mut fm = 0.0;

    let mpd_real = disc.mpd.forward_all(real);
    let mpd_fake = disc.mpd.forward_all(fake);
    for (tr, tf) in mpd_real.iter().zip(&mpd_fake) {
        adv_d += lsgan_d_loss(tr.score_flat(), tf.score_flat());
        adv_g += lsgan_g_loss(tf.score_flat());
        for (fr, ff) in tr.fmaps().iter().zip(tf.fmaps()) {
            fm += fmap_l1(fr.iter(), ff.iter(), fr.len());
        }
    }

    let msd_real = disc.msd.forward_all(real);
    let msd_fake = disc.msd.forward_all(fake);
    for (tr, tf) in msd_real.traces.iter().zip(&msd_fake.traces) {
        adv_d += lsgan_d_loss(tr.score_flat(), tf.score_flat());
        adv_g += lsgan_g_loss(tf.score_flat());
        for (fr, ff) in tr.fmaps().iter().zip(tf.fmaps()) {
            fm += fmap_l1(fr.iter(), ff.iter(), fr.len());
        }
    }

    let (mel_l1, _) = mel.l1_and_input_grad(real, fake);
    Ok(GanLosses {
        adv_d,
        adv_g,
        fm,
        mel: mel_l1,
    })
}
