//! Convolution layers with explicit backward passes.
//!
//! All weights carry the weight-norm reparameterization. Layouts follow the
//! usual channel-major convention: 1-D signals are `(channels, time)` and
//! 2-D maps are `(channels, height, width)`.

use ndarray::{Array1, Array2, Array3, Array4, Ix3, Ix4};
use rand_chacha::ChaCha8Rng;

use super::{uniform_init, Param, ParamSlot, WnWeight};

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn ceil_div(a: isize, b: isize) -> isize {
    (a + b - 1).div_euclid(b)
}

/// Valid output range for one kernel tap: positions `t` in `[lo, hi)` with
/// `0 <= t * stride + off < len`.
#[inline]
fn tap_range(off: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = ceil_div(-off, s).max(0) as usize;
    let hi = (ceil_div(len as isize - off, s).max(0) as usize).min(out_len);
    (lo, hi.max(lo))
}

/// 1-D convolution, optionally grouped.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: WnWeight<Ix3>, // (out, in/groups, k)
    pub bias: Param<ndarray::Ix1>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(in_ch % groups == 0 && out_ch % groups == 0);
        let fan_in = (in_ch / groups) * kernel;
        let w = uniform_init(Ix3(out_ch, in_ch / groups, kernel), fan_in, rng);
        let b = uniform_init(ndarray::Ix1(out_ch), fan_in, rng);
        Conv1d {
            weight: WnWeight::from_weight(w),
            bias: Param::new(b),
            stride,
            dilation,
            padding,
            groups,
        }
    }

    /// A kernel/dilation combination that preserves length at stride 1.
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let padding = (kernel - 1) * dilation / 2;
        Conv1d::new(in_ch, out_ch, kernel, 1, dilation, padding, 1, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.v.value.dim().1 * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.v.value.dim().0
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        let k = self.weight.v.value.dim().2;
        let span = self.dilation * (k - 1) + 1;
        assert!(l_in + 2 * self.padding >= span, "input shorter than kernel span");
        (l_in + 2 * self.padding - span) / self.stride + 1
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (cin, l_in) = x.dim();
        assert_eq!(cin, self.in_channels());
        let (out_ch, in_g, k) = self.weight.v.value.dim();
        let out_g = out_ch / self.groups;
        let l_out = self.out_len(l_in);
        let w = self.weight.materialize();
        let xs = x.as_slice().expect("standard layout");

        let mut ys = vec![0.0; out_ch * l_out];
        for oc in 0..out_ch {
            let yrow = &mut ys[oc * l_out..(oc + 1) * l_out];
            yrow.fill(self.bias.value[oc]);
            let g = oc / out_g;
            for icl in 0..in_g {
                let ic = g * in_g + icl;
                let xrow = &xs[ic * l_in..(ic + 1) * l_in];
                for j in 0..k {
                    let a = w[[oc, icl, j]];
                    let off = (j * self.dilation) as isize - self.padding as isize;
                    let (lo, hi) = tap_range(off, self.stride, l_in, l_out);
                    if lo >= hi {
                        continue;
                    }
                    if self.stride == 1 {
                        let x0 = (lo as isize + off) as usize;
                        axpy(&mut yrow[lo..hi], &xrow[x0..x0 + (hi - lo)], a);
                    } else {
                        for (t, slot) in yrow[lo..hi].iter_mut().enumerate() {
                            let n = ((t + lo) * self.stride) as isize + off;
                            *slot += a * xrow[n as usize];
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((out_ch, l_out), ys).unwrap()
    }

    /// Accumulates weight and bias gradients, returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        let (cin, l_in) = x.dim();
        let (out_ch, in_g, k) = self.weight.v.value.dim();
        let out_g = out_ch / self.groups;
        let l_out = gy.dim().1;
        assert_eq!(gy.dim().0, out_ch);
        let w = self.weight.materialize();
        let xs = x.as_slice().expect("standard layout");
        let gys = gy.as_slice().expect("standard layout");

        let mut gw = Array3::<f64>::zeros((out_ch, in_g, k));
        let mut gxs = vec![0.0; cin * l_in];
        for oc in 0..out_ch {
            let gyrow = &gys[oc * l_out..(oc + 1) * l_out];
            self.bias.grad[oc] += gyrow.iter().sum::<f64>();
            let g = oc / out_g;
            for icl in 0..in_g {
                let ic = g * in_g + icl;
                let xrow = &xs[ic * l_in..(ic + 1) * l_in];
                let gxrow = &mut gxs[ic * l_in..(ic + 1) * l_in];
                for j in 0..k {
                    let off = (j * self.dilation) as isize - self.padding as isize;
                    let (lo, hi) = tap_range(off, self.stride, l_in, l_out);
                    if lo >= hi {
                        continue;
                    }
                    if self.stride == 1 {
                        let x0 = (lo as isize + off) as usize;
                        gw[[oc, icl, j]] += dot(&gyrow[lo..hi], &xrow[x0..x0 + (hi - lo)]);
                        axpy(&mut gxrow[x0..x0 + (hi - lo)], &gyrow[lo..hi], w[[oc, icl, j]]);
                    } else {
                        let mut acc = 0.0;
                        for (t, &gv) in gyrow[lo..hi].iter().enumerate() {
                            let n = (((t + lo) * self.stride) as isize + off) as usize;
                            acc += gv * xrow[n];
                            gxrow[n] += w[[oc, icl, j]] * gv;
                        }
                        gw[[oc, icl, j]] += acc;
                    }
                }
            }
        }
        self.weight.backward(&gw);
        Array2::from_shape_vec((cin, l_in), gxs).unwrap()
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.weight.visit(&format!("{prefix}.w"), f);
        self.bias.visit(&format!("{prefix}.b"), f);
    }
}

/// 1-D transposed convolution (stride-1 input positions spread over the
/// output at `stride` spacing; `padding` crops the full output).
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: WnWeight<Ix3>, // (in, out, k)
    pub bias: Param<ndarray::Ix1>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let w = uniform_init(Ix3(in_ch, out_ch, kernel), fan_in, rng);
        let b = uniform_init(ndarray::Ix1(out_ch), fan_in, rng);
        ConvTranspose1d {
            weight: WnWeight::from_weight(w),
            bias: Param::new(b),
            stride,
            dilation,
            padding,
        }
    }

    /// Exact rate-r upsampler: kernel 2r (even r) or 2r+1 (odd r) with the
    /// padding that makes `out_len == in_len * r`.
    pub fn upsampler(in_ch: usize, out_ch: usize, rate: usize, rng: &mut ChaCha8Rng) -> Self {
        let kernel = if rate % 2 == 0 { 2 * rate } else { 2 * rate + 1 };
        let padding = (kernel - rate) / 2;
        ConvTranspose1d::new(in_ch, out_ch, kernel, rate, 1, padding, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.v.value.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.weight.v.value.dim().1
    }

    pub fn full_len(&self, l_in: usize) -> usize {
        let k = self.weight.v.value.dim().2;
        (l_in - 1) * self.stride + self.dilation * (k - 1) + 1
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        self.full_len(l_in) - 2 * self.padding
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (cin, l_in) = x.dim();
        let (in_ch, out_ch, k) = self.weight.v.value.dim();
        assert_eq!(cin, in_ch);
        let l_full = self.full_len(l_in);
        let l_out = self.out_len(l_in);
        let w = self.weight.materialize();
        let xs = x.as_slice().expect("standard layout");

        let mut yf = vec![0.0; out_ch * l_full];
        for ic in 0..in_ch {
            let xrow = &xs[ic * l_in..(ic + 1) * l_in];
            for oc in 0..out_ch {
                let yrow = &mut yf[oc * l_full..(oc + 1) * l_full];
                for j in 0..k {
                    let a = w[[ic, oc, j]];
                    let base = j * self.dilation;
                    if self.stride == 1 {
                        axpy(&mut yrow[base..base + l_in], xrow, a);
                    } else {
                        for (i, &xv) in xrow.iter().enumerate() {
                            yrow[base + i * self.stride] += a * xv;
                        }
                    }
                }
            }
        }

        let mut y = Array2::zeros((out_ch, l_out));
        for oc in 0..out_ch {
            let b = self.bias.value[oc];
            let src = &yf[oc * l_full + self.padding..oc * l_full + self.padding + l_out];
            for (slot, &v) in y.row_mut(oc).iter_mut().zip(src) {
                *slot = v + b;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        let (cin, l_in) = x.dim();
        let (in_ch, out_ch, k) = self.weight.v.value.dim();
        let l_full = self.full_len(l_in);
        let l_out = self.out_len(l_in);
        assert_eq!(gy.dim(), (out_ch, l_out));
        let w = self.weight.materialize();
        let xs = x.as_slice().expect("standard layout");

        // Undo the crop: gradient of the full (uncropped) output.
        let mut gyf = vec![0.0; out_ch * l_full];
        for oc in 0..out_ch {
            let row = gy.row(oc);
            let dst = &mut gyf[oc * l_full + self.padding..oc * l_full + self.padding + l_out];
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                *d = v;
            }
            self.bias.grad[oc] += row.sum();
        }

        let mut gw = Array3::<f64>::zeros((in_ch, out_ch, k));
        let mut gxs = vec![0.0; cin * l_in];
        for ic in 0..in_ch {
            let xrow = &xs[ic * l_in..(ic + 1) * l_in];
            let gxrow = &mut gxs[ic * l_in..(ic + 1) * l_in];
            for oc in 0..out_ch {
                let gyrow = &gyf[oc * l_full..(oc + 1) * l_full];
                for j in 0..k {
                    let base = j * self.dilation;
                    if self.stride == 1 {
                        gw[[ic, oc, j]] += dot(xrow, &gyrow[base..base + l_in]);
                        axpy(gxrow, &gyrow[base..base + l_in], w[[ic, oc, j]]);
                    } else {
                        let mut acc = 0.0;
                        for i in 0..l_in {
                            let gv = gyrow[base + i * self.stride];
                            acc += xrow[i] * gv;
                            gxrow[i] += w[[ic, oc, j]] * gv;
                        }
                        gw[[ic, oc, j]] += acc;
                    }
                }
            }
        }
        self.weight.backward(&gw);
        Array2::from_shape_vec((cin, l_in), gxs).unwrap()
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.weight.visit(&format!("{prefix}.w"), f);
        self.bias.visit(&format!("{prefix}.b"), f);
    }
}

/// 2-D convolution for the period discriminators.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: WnWeight<Ix4>, // (out, in, kh, kw)
    pub bias: Param<ndarray::Ix1>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let w = uniform_init(Ix4(out_ch, in_ch, kernel.0, kernel.1), fan_in, rng);
        let b = uniform_init(ndarray::Ix1(out_ch), fan_in, rng);
        Conv2d {
            weight: WnWeight::from_weight(w),
            bias: Param::new(b),
            stride,
            padding,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.v.value.dim();
        let ho = (h + 2 * self.padding.0 - kh) / self.stride.0 + 1;
        let wo = (w + 2 * self.padding.1 - kw) / self.stride.1 + 1;
        (ho, wo)
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (cin, h, wd) = x.dim();
        let (out_ch, in_ch, kh, kw) = self.weight.v.value.dim();
        assert_eq!(cin, in_ch);
        let (ho, wo) = self.out_dims(h, wd);
        let w = self.weight.materialize();

        let mut y = Array3::zeros((out_ch, ho, wo));
        for oc in 0..out_ch {
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = self.bias.value[oc];
                    for ic in 0..in_ch {
                        for jh in 0..kh {
                            let hi = (yo * self.stride.0 + jh) as isize - self.padding.0 as isize;
                            if hi < 0 || hi >= h as isize {
                                continue;
                            }
                            for jw in 0..kw {
                                let wi =
                                    (xo * self.stride.1 + jw) as isize - self.padding.1 as isize;
                                if wi < 0 || wi >= wd as isize {
                                    continue;
                                }
                                acc += w[[oc, ic, jh, jw]] * x[[ic, hi as usize, wi as usize]];
                            }
                        }
                    }
                    y[[oc, yo, xo]] = acc;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
        let (cin, h, wd) = x.dim();
        let (out_ch, in_ch, kh, kw) = self.weight.v.value.dim();
        let (ho, wo) = self.out_dims(h, wd);
        assert_eq!(gy.dim(), (out_ch, ho, wo));
        let w = self.weight.materialize();

        let mut gw = Array4::<f64>::zeros((out_ch, in_ch, kh, kw));
        let mut gx = Array3::<f64>::zeros((cin, h, wd));
        for oc in 0..out_ch {
            for yo in 0..ho {
                for xo in 0..wo {
                    let gv = gy[[oc, yo, xo]];
                    if gv == 0.0 {
                        continue;
                    }
                    self.bias.grad[oc] += gv;
                    for ic in 0..in_ch {
                        for jh in 0..kh {
                            let hi = (yo * self.stride.0 + jh) as isize - self.padding.0 as isize;
                            if hi < 0 || hi >= h as isize {
                                continue;
                            }
                            for jw in 0..kw {
                                let wi =
                                    (xo * self.stride.1 + jw) as isize - self.padding.1 as isize;
                                if wi < 0 || wi >= wd as isize {
                                    continue;
                                }
                                gw[[oc, ic, jh, jw]] += gv * x[[ic, hi as usize, wi as usize]];
                                gx[[ic, hi as usize, wi as usize]] += gv * w[[oc, ic, jh, jw]];
                            }
                        }
                    }
                }
            }
        }
        self.weight.backward(&gw);
        gx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.weight.visit(&format!("{prefix}.w"), f);
        self.bias.visit(&format!("{prefix}.b"), f);
    }
}

/// Average pooling with zero padding counted in the mean.
#[derive(Debug, Clone, Copy)]
pub struct AvgPool1d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl AvgPool1d {
    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (c, l_in) = x.dim();
        let l_out = self.out_len(l_in);
        let inv = 1.0 / self.kernel as f64;
        let mut y = Array2::zeros((c, l_out));
        for ch in 0..c {
            for t in 0..l_out {
                let mut acc = 0.0;
                for j in 0..self.kernel {
                    let n = (t * self.stride + j) as isize - self.padding as isize;
                    if n >= 0 && (n as usize) < l_in {
                        acc += x[[ch, n as usize]];
                    }
                }
                y[[ch, t]] = acc * inv;
            }
        }
        y
    }

    pub fn backward(&self, l_in: usize, gy: &Array2<f64>) -> Array2<f64> {
        let (c, l_out) = gy.dim();
        let inv = 1.0 / self.kernel as f64;
        let mut gx = Array2::zeros((c, l_in));
        for ch in 0..c {
            for t in 0..l_out {
                let gv = gy[[ch, t]] * inv;
                for j in 0..self.kernel {
                    let n = (t * self.stride + j) as isize - self.padding as isize;
                    if n >= 0 && (n as usize) < l_in {
                        gx[[ch, n as usize]] += gv;
                    }
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive_conv1d(
        x: &Array2<f64>,
        w: &Array3<f64>,
        b: &Array1<f64>,
        stride: usize,
        dilation: usize,
        padding: usize,
        groups: usize,
    ) -> Array2<f64> {
        let (_, l_in) = x.dim();
        let (out_ch, in_g, k) = w.dim();
        let out_g = out_ch / groups;
        let span = dilation * (k - 1) + 1;
        let l_out = (l_in + 2 * padding - span) / stride + 1;
        let mut y = Array2::zeros((out_ch, l_out));
        for oc in 0..out_ch {
            let g = oc / out_g;
            for t in 0..l_out {
                let mut acc = b[oc];
                for icl in 0..in_g {
                    for j in 0..k {
                        let n = (t * stride + j * dilation) as isize - padding as isize;
                        if n >= 0 && (n as usize) < l_in {
                            acc += w[[oc, icl, j]] * x[[g * in_g + icl, n as usize]];
                        }
                    }
                }
                y[[oc, t]] = acc;
            }
        }
        y
    }

    #[test]
    fn conv1d_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(stride, dilation, padding, groups) in
            &[(1usize, 1usize, 0usize, 1usize), (1, 3, 3, 1), (2, 1, 2, 1), (3, 1, 2, 2), (1, 2, 5, 2)]
        {
            let conv = Conv1d::new(4, 6, 3, stride, dilation, padding, groups, &mut rng);
            let x = uniform_init(ndarray::Ix2(4, 20), 1, &mut rng);
            let got = conv.forward(&x);
            let want = naive_conv1d(
                &x,
                &conv.weight.materialize(),
                &conv.bias.value,
                stride,
                dilation,
                padding,
                groups,
            );
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv1d::new(3, 4, 3, 2, 2, 2, 1, &mut rng);
        let x: Array2<f64> = uniform_init(ndarray::Ix2(3, 12), 1, &mut rng);
        let coef: Array2<f64> = uniform_init(ndarray::Ix2(4, conv.out_len(12)), 1, &mut rng);
        let loss = |c: &Conv1d, x: &Array2<f64>| (c.forward(x) * &coef).sum();

        let gx = conv.backward(&x, &coef);
        let h = 1e-6;
        // Input gradient.
        let mut xp = x.clone();
        for &(i, t) in &[(0usize, 0usize), (1, 5), (2, 11)] {
            xp[[i, t]] = x[[i, t]] + h;
            let lp = loss(&conv, &xp);
            xp[[i, t]] = x[[i, t]] - h;
            let lm = loss(&conv, &xp);
            xp[[i, t]] = x[[i, t]];
            assert!(((lp - lm) / (2.0 * h) - gx[[i, t]]).abs() < 1e-8);
        }
        // Weight-norm v gradient.
        for &(a, b, c) in &[(0usize, 0usize, 0usize), (3, 2, 1), (2, 1, 2)] {
            let base = conv.weight.v.value[[a, b, c]];
            conv.weight.v.value[[a, b, c]] = base + h;
            let lp = loss(&conv, &x);
            conv.weight.v.value[[a, b, c]] = base - h;
            let lm = loss(&conv, &x);
            conv.weight.v.value[[a, b, c]] = base;
            assert!(((lp - lm) / (2.0 * h) - conv.weight.v.grad[[a, b, c]]).abs() < 1e-8);
        }
        // Bias gradient.
        let base = conv.bias.value[1];
        conv.bias.value[1] = base + h;
        let lp = loss(&conv, &x);
        conv.bias.value[1] = base - h;
        let lm = loss(&conv, &x);
        conv.bias.value[1] = base;
        assert!(((lp - lm) / (2.0 * h) - conv.bias.grad[1]).abs() < 1e-8);
    }

    #[test]
    fn transpose_upsampler_multiplies_length_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for rate in [2usize, 3, 4, 5, 8] {
            let up = ConvTranspose1d::upsampler(3, 2, rate, &mut rng);
            let x: Array2<f64> = uniform_init(ndarray::Ix2(3, 7), 1, &mut rng);
            let y = up.forward(&x);
            assert_eq!(y.dim(), (2, 7 * rate), "rate {rate}");
        }
    }

    #[test]
    fn transpose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut up = ConvTranspose1d::new(2, 3, 6, 3, 1, 1, &mut rng);
        let x: Array2<f64> = uniform_init(ndarray::Ix2(2, 5), 1, &mut rng);
        let l_out = up.out_len(5);
        let coef: Array2<f64> = uniform_init(ndarray::Ix2(3, l_out), 1, &mut rng);
        let loss = |u: &ConvTranspose1d, x: &Array2<f64>| (u.forward(x) * &coef).sum();

        let gx = up.backward(&x, &coef);
        let h = 1e-6;
        let mut xp = x.clone();
        for &(i, t) in &[(0usize, 0usize), (1, 4)] {
            xp[[i, t]] = x[[i, t]] + h;
            let lp = loss(&up, &xp);
            xp[[i, t]] = x[[i, t]] - h;
            let lm = loss(&up, &xp);
            xp[[i, t]] = x[[i, t]];
            assert!(((lp - lm) / (2.0 * h) - gx[[i, t]]).abs() < 1e-8);
        }
        for &(a, b, c) in &[(0usize, 0usize, 0usize), (1, 2, 5)] {
            let base = up.weight.v.value[[a, b, c]];
            up.weight.v.value[[a, b, c]] = base + h;
            let lp = loss(&up, &x);
            up.weight.v.value[[a, b, c]] = base - h;
            let lm = loss(&up, &x);
            up.weight.v.value[[a, b, c]] = base;
            assert!(((lp - lm) / (2.0 * h) - up.weight.v.grad[[a, b, c]]).abs() < 1e-8);
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut conv = Conv2d::new(2, 3, (5, 1), (3, 1), (2, 0), &mut rng);
        let x: Array3<f64> = uniform_init(ndarray::Ix3(2, 12, 3), 1, &mut rng);
        let (ho, wo) = conv.out_dims(12, 3);
        let coef: Array3<f64> = uniform_init(ndarray::Ix3(3, ho, wo), 1, &mut rng);
        let loss = |c: &Conv2d, x: &Array3<f64>| (c.forward(x) * &coef).sum();

        let gx = conv.backward(&x, &coef);
        let h = 1e-6;
        let mut xp = x.clone();
        for &(i, r, c) in &[(0usize, 0usize, 0usize), (1, 7, 2)] {
            xp[[i, r, c]] = x[[i, r, c]] + h;
            let lp = loss(&conv, &xp);
            xp[[i, r, c]] = x[[i, r, c]] - h;
            let lm = loss(&conv, &xp);
            xp[[i, r, c]] = x[[i, r, c]];
            assert!(((lp - lm) / (2.0 * h) - gx[[i, r, c]]).abs() < 1e-8);
        }
        for &(a, b, r, c) in &[(0usize, 0usize, 0usize, 0usize), (2, 1, 4, 0)] {
            let base = conv.weight.v.value[[a, b, r, c]];
            conv.weight.v.value[[a, b, r, c]] = base + h;
            let lp = loss(&conv, &x);
            conv.weight.v.value[[a, b, r, c]] = base - h;
            let lm = loss(&conv, &x);
            conv.weight.v.value[[a, b, r, c]] = base;
            assert!(((lp - lm) / (2.0 * h) - conv.weight.v.grad[[a, b, r, c]]).abs() < 1e-8);
        }
    }

    #[test]
    fn avg_pool_length_and_adjoint() {
        let pool = AvgPool1d {
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        // Matches floor((len + 2 - 4) / 2) + 1.
        assert_eq!(pool.out_len(3840), 1920);
        assert_eq!(pool.out_len(10), 5);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Array2<f64> = uniform_init(ndarray::Ix2(2, 10), 1, &mut rng);
        let coef: Array2<f64> = uniform_init(ndarray::Ix2(2, 5), 1, &mut rng);
        let gx = pool.backward(10, &coef);
        let h = 1e-6;
        let loss = |x: &Array2<f64>| (pool.forward(x) * &coef).sum();
        let mut xp = x.clone();
        for &(i, t) in &[(0usize, 0usize), (1, 9), (0, 4)] {
            xp[[i, t]] = x[[i, t]] + h;
            let lp = loss(&xp);
            xp[[i, t]] = x[[i, t]] - h;
            let lm = loss(&xp);
            xp[[i, t]] = x[[i, t]];
            assert!(((lp - lm) / (2.0 * h) - gx[[i, t]]).abs() < 1e-9);
        }
    }
}
