//! Hand-rolled layers and optimization.
//!
//! Everything is f64 with explicit forward/backward pairs: each layer's
//! `backward` takes the forward input it saw plus the output gradient,
//! accumulates parameter gradients in place and returns the input gradient.
//! Models expose their parameters through [`Parameterized`] so the
//! optimizer, checkpointing and the partition hash all walk the same fixed
//! order.

mod adam;
mod conv;

pub mod check;

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use conv::{AvgPool1d, Conv1d, Conv2d, ConvTranspose1d};

/// A learnable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn visit(&mut self, name: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        let shape = self.value.shape().to_vec();
        f(
            name,
            ParamSlot {
                value: self.value.as_slice_mut().expect("standard layout"),
                grad: self.grad.as_slice_mut().expect("standard layout"),
                shape,
            },
        );
    }
}

/// Flat view of one parameter handed to visitors.
pub struct ParamSlot<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub shape: Vec<usize>,
}

/// Anything holding learnable parameters. Visitation order is fixed by the
/// implementation and shared by the optimizer, checkpoints and hashing.
pub trait Parameterized {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, ParamSlot<'_>));

    fn zero_grads(&mut self) {
        self.for_each_param(&mut |_, slot| slot.grad.fill(0.0));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, slot| n += slot.value.len());
        n
    }
}

/// Weight-norm reparameterization: `w[r, ..] = g[r] * v[r, ..] / |v[r, ..]|`
/// with rows taken along the first axis.
#[derive(Debug, Clone)]
pub struct WnWeight<D: Dimension> {
    pub g: Param<ndarray::Ix1>,
    pub v: Param<D>,
}

const NORM_EPS: f64 = 1e-12;

impl<D: Dimension> WnWeight<D> {
    /// Decompose a dense weight into (g, v) = (row norms, direction).
    pub fn from_weight(w: Array<f64, D>) -> Self {
        let rows = w.shape()[0];
        let row_len = w.len() / rows;
        let flat = w.as_slice().expect("standard layout");
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &flat[r * row_len..(r + 1) * row_len];
            norms.push(row.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        WnWeight {
            g: Param::new(Array::from_vec(norms)),
            v: Param::new(w),
        }
    }

    pub fn materialize(&self) -> Array<f64, D> {
        let rows = self.v.value.shape()[0];
        let row_len = self.v.value.len() / rows;
        let v = self.v.value.as_slice().expect("standard layout");
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * row_len..(r + 1) * row_len];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            let scale = self.g.value[r] / norm;
            for (o, &x) in out[r * row_len..(r + 1) * row_len].iter_mut().zip(row) {
                *o = scale * x;
            }
        }
        Array::from_shape_vec(self.v.value.raw_dim(), out).unwrap()
    }

    /// Chain the gradient of the materialized weight into g and v.
    pub fn backward(&mut self, gw: &Array<f64, D>) {
        let rows = self.v.value.shape()[0];
        let row_len = self.v.value.len() / rows;
        let v = self.v.value.as_slice().expect("standard layout");
        let gw = gw.as_slice().expect("standard layout");
        let gv = self.v.grad.as_slice_mut().expect("standard layout");
        for r in 0..rows {
            let span = r * row_len..(r + 1) * row_len;
            let vr = &v[span.clone()];
            let gwr = &gw[span.clone()];
            let norm = vr.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            let dot: f64 = gwr.iter().zip(vr).map(|(a, b)| a * b).sum();
            self.g.grad[r] += dot / norm;
            let scale = self.g.value[r] / norm;
            let proj = dot / (norm * norm);
            for ((gvi, &gwi), &vi) in gv[span].iter_mut().zip(gwr).zip(vr) {
                *gvi += scale * (gwi - proj * vi);
            }
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamSlot<'_>)) {
        self.g.visit(&format!("{prefix}.g"), f);
        self.v.visit(&format!("{prefix}.v"), f);
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
pub fn uniform_init<D: Dimension>(
    dim: D,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<f64, D> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = dim.size();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::from_shape_vec(dim, data).unwrap()
}

pub fn leaky_relu<D: Dimension>(x: &Array<f64, D>, slope: f64) -> Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_grad<D: Dimension>(
    x: &Array<f64, D>,
    gy: &Array<f64, D>,
    slope: f64,
) -> Array<f64, D> {
    let mut gx = gy.clone();
    ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= 0.0 {
            *g *= slope;
        }
    });
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn weight_norm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Array2<f64> = uniform_init(ndarray::Ix2(4, 6), 6, &mut rng);
        let wn = WnWeight::from_weight(w.clone());
        let back = wn.materialize();
        for (a, b) in w.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Array2<f64> = uniform_init(ndarray::Ix2(3, 5), 5, &mut rng);
        let mut wn = WnWeight::from_weight(w);
        // Loss = sum of materialized weights times fixed coefficients.
        let coef: Array2<f64> = uniform_init(ndarray::Ix2(3, 5), 1, &mut rng);
        let loss = |wn: &WnWeight<ndarray::Ix2>| (wn.materialize() * &coef).sum();

        wn.backward(&coef);
        let h = 1e-6;
        for r in 0..3 {
            let base = wn.g.value[r];
            wn.g.value[r] = base + h;
            let lp = loss(&wn);
            wn.g.value[r] = base - h;
            let lm = loss(&wn);
            wn.g.value[r] = base;
            let numeric = (lp - lm) / (2.0 * h);
            assert!((numeric - wn.g.grad[r]).abs() < 1e-8);
        }
        for &(r, c) in &[(0usize, 0usize), (1, 3), (2, 4)] {
            let base = wn.v.value[[r, c]];
            wn.v.value[[r, c]] = base + h;
            let lp = loss(&wn);
            wn.v.value[[r, c]] = base - h;
            let lm = loss(&wn);
            wn.v.value[[r, c]] = base;
            let numeric = (lp - lm) / (2.0 * h);
            assert!((numeric - wn.v.grad[[r, c]]).abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_init_is_seed_deterministic() {
        let a: Array2<f64> =
            uniform_init(ndarray::Ix2(5, 5), 5, &mut ChaCha8Rng::seed_from_u64(11));
        let b: Array2<f64> =
            uniform_init(ndarray::Ix2(5, 5), 5, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| x.abs() < 1.0 / 5f64.sqrt()));
    }
}
