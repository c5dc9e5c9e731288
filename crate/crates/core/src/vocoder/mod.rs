//! The GAN vocoder: conditioning assembly, generator, discriminators and
//! training losses.

mod discriminator;
mod generator;
mod losses;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discriminator::{
    mpd_geometry, Discriminators, MpdTrace, MsdTrace, MultiPeriodDiscriminator,
    MultiScaleDiscriminator,
};
pub use generator::{GenCache, Generator};
pub use losses::{gan_losses, lsgan_d_loss, lsgan_g_loss, GanLosses};

pub const OUTPUT_RATE: u32 = 24000;

/// Generator conditioning: `T_r x (F + D + S)` with layout
/// `[f0 | content | singer]`. The singer columns are constant across rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBlock {
    pub matrix: Array2<f64>,
    pub f0_dim: usize,
    pub content_dim: usize,
    pub singer_dim: usize,
}

impl ConditioningBlock {
    pub fn frames(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Maximum tolerated f0/content frame-count difference before assembly
/// refuses to trim.
pub const STREAM_TOLERANCE: usize = 4;

/// Trim the f0 and content streams to a common length and concatenate them
/// with the broadcast singer embedding.
pub fn assemble_conditioning(
    f0_features: ArrayView2<'_, f64>,
    content: ArrayView2<'_, f64>,
    singer: ArrayView1<'_, f64>,
) -> Result<ConditioningBlock> {
    let t_f0 = f0_features.nrows();
    let t_content = content.nrows();
    if t_f0.abs_diff(t_content) > STREAM_TOLERANCE {
        return Err(Error::StreamMisalignment {
            f0_frames: t_f0,
            content_frames: t_content,
            tolerance: STREAM_TOLERANCE,
        });
    }
    let t = t_f0.min(t_content);
    let (f, d, s) = (f0_features.ncols(), content.ncols(), singer.len());
    let mut matrix = Array2::zeros((t, f + d + s));
    for row in 0..t {
        let mut dst = matrix.row_mut(row);
        dst.slice_mut(ndarray::s![..f]).assign(&f0_features.row(row));
        dst.slice_mut(ndarray::s![f..f + d]).assign(&content.row(row));
        dst.slice_mut(ndarray::s![f + d..]).assign(&singer);
    }
    Ok(ConditioningBlock {
        matrix,
        f0_dim: f,
        content_dim: d,
        singer_dim: s,
    })
}

/// Generator architecture.
///
/// The default conditions at 200 Hz with rates [5, 4, 3, 2] (hop 120). The
/// literal preset keeps rates [3, 4, 5, 8] and conditions at 50 Hz instead;
/// either way `product(rates) * conditioning_rate` must equal 24000.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    pub upsample_rates: Vec<usize>,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<usize>,
    pub base_channels: usize,
    pub conditioning_rate: u32,
    pub in_width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            upsample_rates: vec![5, 4, 3, 2],
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![1, 3, 5],
            base_channels: 64,
            conditioning_rate: 200,
            in_width: 448,
        }
    }
}

impl GeneratorConfig {
    /// Rates [3, 4, 5, 8] over 50 Hz conditioning, full-width channels.
    pub fn paper_literal(in_width: usize) -> Self {
        GeneratorConfig {
            upsample_rates: vec![3, 4, 5, 8],
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![1, 3, 5],
            base_channels: 512,
            conditioning_rate: 50,
            in_width,
        }
    }

    /// Samples generated per conditioning frame.
    pub fn hop(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let product: usize = self.hop();
        if product as u32 * self.conditioning_rate != OUTPUT_RATE {
            return Err(Error::Config(format!(
                "product(upsample_rates) = {product} at {} Hz conditioning does not reach {} Hz output",
                self.conditioning_rate, OUTPUT_RATE
            )));
        }
        if self.resblock_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("resblock kernels must be odd".into()));
        }
        if self.base_channels < 2 || self.in_width == 0 {
            return Err(Error::Config("degenerate generator dimensions".into()));
        }
        Ok(())
    }
}

/// Discriminator bank configuration. Periods and scales follow the paper;
/// channel schedules are conventional and sized for the desk by default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscriminatorConfig {
    pub mpd_periods: Vec<usize>,
    pub msd_scales: Vec<usize>,
    /// Channels of the stride-(3,1) MPD stages.
    pub mpd_channels: Vec<usize>,
    /// MSD layer schedule: (out_channels, kernel, stride, groups).
    pub msd_layers: Vec<(usize, usize, usize, usize)>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            mpd_periods: vec![2, 3, 5, 7, 11],
            msd_scales: vec![1, 2, 4],
            mpd_channels: vec![4, 16, 32, 64],
            msd_layers: vec![(8, 15, 1, 1), (16, 41, 2, 2), (32, 41, 2, 4), (32, 41, 4, 4), (32, 5, 1, 1)],
        }
    }
}

impl DiscriminatorConfig {
    /// Full HiFi-GAN-convention schedules.
    pub fn paper_literal() -> Self {
        DiscriminatorConfig {
            mpd_periods: vec![2, 3, 5, 7, 11],
            msd_scales: vec![1, 2, 4],
            mpd_channels: vec![32, 128, 512, 1024],
            msd_layers: vec![
                (128, 15, 1, 1),
                (128, 41, 2, 4),
                (256, 41, 2, 16),
                (512, 41, 4, 16),
                (1024, 41, 4, 16),
                (1024, 41, 1, 16),
                (1024, 5, 1, 1),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpd_periods.is_empty() || self.msd_scales.is_empty() {
            return Err(Error::Config("empty discriminator banks".into()));
        }
        for (i, &a) in self.mpd_periods.iter().enumerate() {
            for &b in &self.mpd_periods[i + 1..] {
                if gcd(a, b) != 1 {
                    return Err(Error::Config(format!(
                        "periods {a} and {b} are not coprime"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
