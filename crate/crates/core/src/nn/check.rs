//! Finite-difference gradient verification.
//!
//! Central differences against the analytic gradient of a scalar loss. Used
//! by the unit tests and by the acceptance suite for the encoders and the
//! generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Parameterized;

/// One compared parameter element.
#[derive(Debug, Clone)]
pub struct GradCheckItem {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compare analytic and central-difference gradients on `picks` random
/// parameter elements.
///
/// `loss` must recompute the full forward pass from the current parameter
/// values. Analytic gradients are read from the grad buffers, so run the
/// model's backward pass (after zeroing grads) before calling this.
pub fn finite_difference_check<M, F>(
    model: &mut M,
    loss: F,
    picks: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<GradCheckItem>
where
    M: Parameterized,
    F: Fn(&mut M) -> f64,
{
    // Snapshot names/sizes/analytic grads up front.
    let mut entries: Vec<(String, usize)> = Vec::new();
    let mut grads: Vec<Vec<f64>> = Vec::new();
    model.for_each_param(&mut |name, slot| {
        entries.push((name.to_string(), slot.value.len()));
        grads.push(slot.grad.to_vec());
    });

    let total: usize = entries.iter().map(|(_, n)| n).sum();
    let mut items = Vec::with_capacity(picks);
    for _ in 0..picks {
        let mut flat = rng.gen_range(0..total);
        let mut param_idx = 0;
        while flat >= entries[param_idx].1 {
            flat -= entries[param_idx].1;
            param_idx += 1;
        }

        let numeric = {
            let perturb = |model: &mut M, delta: f64| {
                let mut i = 0;
                model.for_each_param(&mut |_, slot| {
                    if i == param_idx {
                        slot.value[flat] += delta;
                    }
                    i += 1;
                });
            };
            perturb(model, step);
            let lp = loss(model);
            perturb(model, -2.0 * step);
            let lm = loss(model);
            perturb(model, step);
            (lp - lm) / (2.0 * step)
        };

        let analytic = grads[param_idx][flat];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        items.push(GradCheckItem {
            name: entries[param_idx].0.clone(),
            index: flat,
            analytic,
            numeric,
            relative_error: (analytic - numeric).abs() / denom,
        });
    }
    items
}

/// Largest relative error in a check result.
pub fn max_relative_error(items: &[GradCheckItem]) -> f64 {
    items
        .iter()
        .map(|i| i.relative_error)
        .fold(0.0, f64::max)
}
