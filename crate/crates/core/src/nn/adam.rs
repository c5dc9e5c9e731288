//! Adam optimizer over a [`Parameterized`] model.

use super::{ParamSlot, Parameterized};

#[derive(Debug, Clone)]
struct Moments {
    name: String,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

/// Standard Adam. Moments are keyed by parameter name in visitation order so
/// state survives checkpointing.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    slots: Vec<Moments>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            slots: Vec::new(),
        }
    }

    /// One update with the given learning rate; gradients are left untouched.
    pub fn step(&mut self, model: &mut dyn Parameterized, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        let mut index = 0;
        let slots = &mut self.slots;
        model.for_each_param(&mut |name, slot: ParamSlot<'_>| {
            if slots.len() == index {
                slots.push(Moments {
                    name: name.to_string(),
                    m1: vec![0.0; slot.value.len()],
                    m2: vec![0.0; slot.value.len()],
                });
            }
            let mom = &mut slots[index];
            assert_eq!(mom.name, name, "parameter order changed under the optimizer");
            for i in 0..slot.value.len() {
                let g = slot.grad[i];
                mom.m1[i] = b1 * mom.m1[i] + (1.0 - b1) * g;
                mom.m2[i] = b2 * mom.m2[i] + (1.0 - b2) * g * g;
                let mhat = mom.m1[i] / bc1;
                let vhat = mom.m2[i] / bc2;
                slot.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            index += 1;
        });
    }

    /// Moment vectors in visitation order, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.slots
            .iter()
            .map(|m| (m.name.as_str(), m.m1.as_slice(), m.m2.as_slice()))
    }

    pub fn restore(&mut self, t: u64, moments: Vec<(String, Vec<f64>, Vec<f64>)>) {
        self.t = t;
        self.slots = moments
            .into_iter()
            .map(|(name, m1, m2)| Moments { name, m1, m2 })
            .collect();
    }
}
