use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW hyperparameters. Weight decay is decoupled from the adaptive step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        AdamWState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            ..AdamW::default()
        }
    }

    pub fn step(&self, params: &mut [f64], grads: &[f64], state: &mut AdamWState) -> Result<()> {
        if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
            return Err(Error::Shape(format!(
                "AdamW: {} params, {} grads, moments {}/{}",
                params.len(),
                grads.len(),
                state.m.len(),
                state.v.len()
            )));
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut())
            .zip(state.v.iter_mut())
        {
            *p -= self.lr * self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
