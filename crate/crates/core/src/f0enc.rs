//! Learnable f0 feature encoders.
//!
//! Two interchangeable encoders lift a quantized f0 contour into a dense
//! `T x F` conditioning feature, trained end-to-end with the vocoder:
//!
//! * Q-LUT: an `L x F` embedding table indexed by the quantized bin.
//! * PBTC: the one-hot contour is processed by `K` parallel stride-1
//!   transposed convolutions with dilations `1..=K` and `F` filters each;
//!   branch outputs are truncated to the input duration and summed. The
//!   bank is affine in its input, which the algebra tests exploit.
//!
//! Bin 0 is the reserved unvoiced symbol, so both encoders learn an
//! explicit unvoiced embedding.

use ndarray::{Array2, Ix1, Ix2, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_init, Param, ParamSlot, Parameterized};
use crate::pitch::QuantizedF0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    QLut,
    Pbtc,
}

/// Dimension bundle for either encoder: `levels` (L), `dim` (F),
/// `branches` (K, PBTC only), `taps` (W, PBTC only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub levels: usize,
    pub dim: usize,
    pub branches: usize,
    pub taps: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            levels: 400,
            dim: 256,
            branches: 10,
            taps: 3,
        }
    }
}

/// L x F embedding table.
#[derive(Debug, Clone)]
pub struct QLutEncoder {
    pub table: Param<Ix2>,
}

impl QLutEncoder {
    pub fn init(levels: usize, dim: usize, seed: u64) -> Self {
        assert!(levels >= 2 && dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // The lookup is a linear map on one-hot input, so fan_in = levels.
        QLutEncoder {
            table: Param::new(uniform_init(Ix2(levels, dim), levels, &mut rng)),
        }
    }

    pub fn levels(&self) -> usize {
        self.table.value.dim().0
    }

    pub fn dim(&self) -> usize {
        self.table.value.dim().1
    }

    pub fn forward(&self, q: &QuantizedF0) -> Result<Array2<f64>> {
        let (levels, dim) = self.table.value.dim();
        let mut out = Array2::zeros((q.len(), dim));
        for (t, &bin) in q.bins.iter().enumerate() {
            if bin >= levels {
                return Err(Error::BinOutOfRange { bin, bins: levels });
            }
            out.row_mut(t).assign(&self.table.value.row(bin));
        }
        Ok(out)
    }

    /// Accumulate table gradients; only rows whose bins appear in `q` are
    /// touched.
    pub fn backward(&mut self, q: &QuantizedF0, gy: &Array2<f64>) {
        assert_eq!(gy.dim(), (q.len(), self.dim()));
        for (t, &bin) in q.bins.iter().enumerate() {
            let mut row = self.table.grad.row_mut(bin);
            row += &gy.row(t);
        }
    }
}

impl Parameterized for QLutEncoder {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.table.visit("qlut.table", f);
    }
}

/// Dense one-hot expansion of a quantized contour: `T x L` with a single 1
/// per row.
pub fn one_hot(q: &QuantizedF0) -> Array2<f64> {
    let mut out = Array2::zeros((q.len(), q.levels));
    for (t, &bin) in q.bins.iter().enumerate() {
        assert!(bin < q.levels, "bin {bin} out of range");
        out[[t, bin]] = 1.0;
    }
    out
}

/// One transposed-convolution branch: kernel stored as (levels, taps, dim)
/// so the per-tap filter row is contiguous.
#[derive(Debug, Clone)]
pub struct PbtcBranch {
    pub kernel: Param<Ix3>,
    pub bias: Param<Ix1>,
    pub dilation: usize,
}

/// Parallel bank of transposed convolutions.
#[derive(Debug, Clone)]
pub struct PbtcEncoder {
    pub branches: Vec<PbtcBranch>,
    levels: usize,
    dim: usize,
    taps: usize,
}

impl PbtcEncoder {
    pub fn init(levels: usize, dim: usize, branches: usize, taps: usize, seed: u64) -> Self {
        assert!(levels >= 2 && dim >= 1 && branches >= 1 && taps >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = levels * taps;
        let branches = (1..=branches)
            .map(|dilation| PbtcBranch {
                kernel: Param::new(uniform_init(Ix3(levels, taps, dim), fan_in, &mut rng)),
                bias: Param::new(uniform_init(Ix1(dim), fan_in, &mut rng)),
                dilation,
            })
            .collect();
        PbtcEncoder {
            branches,
            levels,
            dim,
            taps,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn max_dilation(&self) -> usize {
        self.branches.last().map(|b| b.dilation).unwrap_or(0)
    }

    /// Dense forward over an arbitrary `T x L` matrix. Each branch's
    /// transposed convolution runs at stride 1 with its own dilation; the
    /// overhang past `T` frames is truncated before the branch sum.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        let (t_frames, levels) = input.dim();
        if levels != self.levels {
            return Err(Error::DimMismatch {
                expected: self.levels,
                found: levels,
            });
        }
        let mut out = Array2::zeros((t_frames, self.dim));
        for branch in &self.branches {
            for t in 0..t_frames {
                for l in 0..levels {
                    let x = input[[t, l]];
                    if x == 0.0 {
                        continue;
                    }
                    for j in 0..self.taps {
                        let dst = t + j * branch.dilation;
                        if dst >= t_frames {
                            break;
                        }
                        let mut row = out.row_mut(dst);
                        let filt = branch.kernel.value.slice(ndarray::s![l, j, ..]);
                        ndarray::Zip::from(&mut row).and(&filt).for_each(|o, &w| *o += x * w);
                    }
                }
            }
            let mut out_view = out.view_mut();
            out_view += &branch.bias.value.view().insert_axis(ndarray::Axis(0));
        }
        Ok(out)
    }

    /// One-hot fast path used in training: equivalent to
    /// `forward(one_hot(q))`.
    pub fn forward_bins(&self, q: &QuantizedF0) -> Result<Array2<f64>> {
        if q.levels != self.levels {
            return Err(Error::DimMismatch {
                expected: self.levels,
                found: q.levels,
            });
        }
        let t_frames = q.len();
        let mut out = Array2::zeros((t_frames, self.dim));
        for branch in &self.branches {
            for (t, &bin) in q.bins.iter().enumerate() {
                if bin >= self.levels {
                    return Err(Error::BinOutOfRange {
                        bin,
                        bins: self.levels,
                    });
                }
                for j in 0..self.taps {
                    let dst = t + j * branch.dilation;
                    if dst >= t_frames {
                        break;
                    }
                    let mut row = out.row_mut(dst);
                    let filt = branch.kernel.value.slice(ndarray::s![bin, j, ..]);
                    ndarray::Zip::from(&mut row).and(&filt).for_each(|o, &w| *o += w);
                }
            }
            let mut out_view = out.view_mut();
            out_view += &branch.bias.value.view().insert_axis(ndarray::Axis(0));
        }
        Ok(out)
    }

    pub fn backward_bins(&mut self, q: &QuantizedF0, gy: &Array2<f64>) {
        let t_frames = q.len();
        assert_eq!(gy.dim(), (t_frames, self.dim));
        for branch in &mut self.branches {
            for (t, &bin) in q.bins.iter().enumerate() {
                for j in 0..self.taps {
                    let dst = t + j * branch.dilation;
                    if dst >= t_frames {
                        break;
                    }
                    let mut gk = branch.kernel.grad.slice_mut(ndarray::s![bin, j, ..]);
                    gk += &gy.row(dst);
                }
            }
            let gsum = gy.sum_axis(ndarray::Axis(0));
            branch.bias.grad += &gsum;
        }
    }
}

impl Parameterized for PbtcEncoder {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        for (i, branch) in self.branches.iter_mut().enumerate() {
            branch.kernel.visit(&format!("pbtc.{i}.kernel"), f);
            branch.bias.visit(&format!("pbtc.{i}.bias"), f);
        }
    }
}

/// Either encoder behind one dispatch point.
#[derive(Debug, Clone)]
pub enum F0Encoder {
    QLut(QLutEncoder),
    Pbtc(PbtcEncoder),
}

impl F0Encoder {
    /// Deterministic seeded construction; the same seed reproduces
    /// bit-identical parameters.
    pub fn init(kind: EncoderKind, dims: &EncoderDims, seed: u64) -> Self {
        match kind {
            EncoderKind::QLut => F0Encoder::QLut(QLutEncoder::init(dims.levels, dims.dim, seed)),
            EncoderKind::Pbtc => F0Encoder::Pbtc(PbtcEncoder::init(
                dims.levels,
                dims.dim,
                dims.branches,
                dims.taps,
                seed,
            )),
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            F0Encoder::QLut(_) => EncoderKind::QLut,
            F0Encoder::Pbtc(_) => EncoderKind::Pbtc,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            F0Encoder::QLut(e) => e.dim(),
            F0Encoder::Pbtc(e) => e.dim(),
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            F0Encoder::QLut(e) => e.levels(),
            F0Encoder::Pbtc(e) => e.levels(),
        }
    }

    pub fn forward_bins(&self, q: &QuantizedF0) -> Result<Array2<f64>> {
        match self {
            F0Encoder::QLut(e) => e.forward(q),
            F0Encoder::Pbtc(e) => e.forward_bins(q),
        }
    }

    pub fn backward_bins(&mut self, q: &QuantizedF0, gy: &Array2<f64>) {
        match self {
            F0Encoder::QLut(e) => e.backward(q, gy),
            F0Encoder::Pbtc(e) => e.backward_bins(q, gy),
        }
    }
}

impl Parameterized for F0Encoder {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        match self {
            F0Encoder::QLut(e) => e.for_each_param(f),
            F0Encoder::Pbtc(e) => e.for_each_param(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{finite_difference_check, max_relative_error};
    use rand::Rng;

    fn quant(bins: Vec<usize>, levels: usize) -> QuantizedF0 {
        QuantizedF0 { bins, levels }
    }

    #[test]
    fn qlut_lookup_semantics() {
        let enc = QLutEncoder::init(16, 4, 7);
        let out = enc.forward(&quant(vec![7, 7, 7], 16)).unwrap();
        assert_eq!(out.dim(), (3, 4));
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));

        // Changing one bin changes only that row.
        let a = enc.forward(&quant(vec![1, 2, 3], 16)).unwrap();
        let b = enc.forward(&quant(vec![1, 9, 3], 16)).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
        assert_eq!(a.row(2), b.row(2));
    }

    #[test]
    fn qlut_rejects_out_of_range_bins() {
        let enc = QLutEncoder::init(8, 4, 7);
        match enc.forward(&quant(vec![8], 8)) {
            Err(Error::BinOutOfRange { bin: 8, bins: 8 }) => {}
            other => panic!("expected BinOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn qlut_paper_dims() {
        let enc = QLutEncoder::init(400, 256, 1);
        assert_eq!(enc.table.value.dim(), (400, 256));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let dims = EncoderDims {
            levels: 32,
            dim: 8,
            branches: 4,
            taps: 3,
        };
        for kind in [EncoderKind::QLut, EncoderKind::Pbtc] {
            let mut a = F0Encoder::init(kind, &dims, 99);
            let mut b = F0Encoder::init(kind, &dims, 99);
            let mut va = Vec::new();
            a.for_each_param(&mut |_, s| va.extend_from_slice(s.value));
            let mut vb = Vec::new();
            b.for_each_param(&mut |_, s| vb.extend_from_slice(s.value));
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn pbtc_has_linearly_increasing_dilations() {
        let enc = PbtcEncoder::init(16, 4, 10, 3, 5);
        let dilations: Vec<usize> = enc.branches.iter().map(|b| b.dilation).collect();
        assert_eq!(dilations, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn one_hot_examples() {
        let oh = one_hot(&quant(vec![0, 2], 3));
        assert_eq!(oh, ndarray::arr2(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]));
        for row in oh.rows() {
            assert_eq!(row.sum(), 1.0);
        }
        let empty = one_hot(&quant(vec![], 5));
        assert_eq!(empty.dim(), (0, 5));
    }

    #[test]
    fn zero_input_yields_summed_biases() {
        let enc = PbtcEncoder::init(8, 4, 3, 3, 11);
        let zeros = Array2::zeros((6, 8));
        let out = enc.forward(&zeros).unwrap();
        let bias_sum: ndarray::Array1<f64> = enc
            .branches
            .iter()
            .fold(ndarray::Array1::zeros(4), |acc, b| acc + &b.bias.value);
        for row in out.rows() {
            for (a, b) in row.iter().zip(bias_sum.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dense_and_bins_paths_agree() {
        let enc = PbtcEncoder::init(12, 6, 4, 3, 23);
        let q = quant(vec![0, 3, 11, 5, 5, 1, 0, 7], 12);
        let dense = enc.forward(&one_hot(&q)).unwrap();
        let fast = enc.forward_bins(&q).unwrap();
        assert_eq!(dense, fast);
    }

    #[test]
    fn impulse_support_bound() {
        for branches in [1usize, 3, 10] {
            let mut enc = PbtcEncoder::init(8, 4, branches, 3, 31);
            for b in &mut enc.branches {
                b.bias.value.fill(0.0);
            }
            let t_frames = 64;
            let t0 = 20;
            let mut input = Array2::zeros((t_frames, 8));
            input[[t0, 3]] = 1.0;
            let out = enc.forward(&input).unwrap();
            let max_d = enc.max_dilation();
            let hi = (t0 + (enc.taps() - 1) * max_d).min(t_frames - 1);
            for t in 0..t_frames {
                let nonzero = out.row(t).iter().any(|&v| v != 0.0);
                if t < t0 || t > hi {
                    assert!(!nonzero, "branches {branches}: leak at frame {t}");
                }
            }
            // The impulse position itself must be populated.
            assert!(out.row(t0).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn superposition_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..5u64 {
            let mut enc = PbtcEncoder::init(10, 5, 4, 3, seed);
            for b in &mut enc.branches {
                b.bias.value.fill(0.0);
            }
            let mut x1 = Array2::zeros((24, 10));
            let mut x2 = Array2::zeros((24, 10));
            for _ in 0..8 {
                x1[[rng.gen_range(0..24), rng.gen_range(0..10)]] = rng.gen_range(-1.0..1.0);
                x2[[rng.gen_range(0..24), rng.gen_range(0..10)]] = rng.gen_range(-1.0..1.0);
            }
            let sum = enc.forward(&(&x1 + &x2)).unwrap();
            let parts = enc.forward(&x1).unwrap() + enc.forward(&x2).unwrap();
            for (a, b) in sum.iter().zip(parts.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
            let doubled = enc.forward(&(&x1 * 2.0)).unwrap();
            let twice = enc.forward(&x1).unwrap() * 2.0;
            for (a, b) in doubled.iter().zip(twice.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn interior_translation_equivariance() {
        let enc = PbtcEncoder::init(8, 4, 3, 3, 41);
        let t_frames = 64;
        let margin = (enc.taps() - 1) * enc.max_dilation();
        let t0 = margin + 2;
        let shift = 9;
        let mut a = Array2::zeros((t_frames, 8));
        let mut b = Array2::zeros((t_frames, 8));
        a[[t0, 5]] = 1.0;
        b[[t0 + shift, 5]] = 1.0;
        let ya = enc.forward(&a).unwrap();
        let yb = enc.forward(&b).unwrap();
        for t in 0..t_frames - shift {
            for f in 0..4 {
                assert!(
                    (ya[[t, f]] - yb[[t + shift, f]]).abs() < 1e-6,
                    "frame {t} feature {f}"
                );
            }
        }
    }

    #[test]
    fn qlut_gradient_sparsity() {
        let mut enc = QLutEncoder::init(16, 4, 3);
        let q = quant(vec![2, 5, 2], 16);
        let gy = Array2::from_elem((3, 4), 1.0);
        enc.backward(&q, &gy);
        for bin in 0..16 {
            let nonzero = enc.table.grad.row(bin).iter().any(|&g| g != 0.0);
            assert_eq!(nonzero, bin == 2 || bin == 5, "bin {bin}");
        }
        // Row 2 was hit twice.
        assert_eq!(enc.table.grad[[2, 0]], 2.0);
    }

    #[test]
    fn finite_difference_gradients() {
        // T_r = 16, L = 8, F = 4 for both encoders.
        let q = quant(vec![0, 1, 7, 3, 3, 2, 0, 5, 6, 1, 4, 7, 2, 0, 3, 5], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let coef: Array2<f64> = uniform_init(Ix2(16, 4), 1, &mut rng);

        let dims = EncoderDims {
            levels: 8,
            dim: 4,
            branches: 3,
            taps: 3,
        };
        for kind in [EncoderKind::QLut, EncoderKind::Pbtc] {
            let mut enc = F0Encoder::init(kind, &dims, 7);
            enc.zero_grads();
            let out = enc.forward_bins(&q).unwrap();
            let _ = out;
            enc.backward_bins(&q, &coef);
            let loss = |e: &mut F0Encoder| (e.forward_bins(&q).unwrap() * &coef).sum();
            let items = finite_difference_check(&mut enc, loss, 10, 1e-4, &mut rng);
            let err = max_relative_error(&items);
            assert!(err < 1e-3, "{kind:?}: max relative error {err}");
        }
    }
}
