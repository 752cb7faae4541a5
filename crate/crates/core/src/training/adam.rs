use crate::error::{Error, Result};
use crate::model::{Gradients, Model, Moments};

pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with bias correction and a fixed learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub moments: Moments,
}

impl Adam {
    pub fn new(model: &Model, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            t: 0,
            moments: Moments::zeros_like(model),
        }
    }

    /// Continues from saved accumulators after `t` updates.
    pub fn with_state(mut self, t: u64, moments: Moments) -> Result<Self> {
        let fits = moments.m.len() == self.moments.m.len()
            && moments
                .m
                .iter()
                .zip(&moments.v)
                .zip(&self.moments.m)
                .all(|((m, v), want)| m.len() == want.len() && v.len() == want.len());
        if !fits {
            return Err(Error::Shape("optimizer state does not match the model".into()));
        }
        self.t = t;
        self.moments = moments;
        Ok(self)
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        if grads.data.len() != self.moments.m.len() {
            return Err(Error::Shape("gradient buffers do not match the optimizer".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let step = self.learning_rate * c2.sqrt() / c1;
        let eps = ADAM_EPSILON * c2.sqrt();
        for (((p, g), m), v) in model
            .parameters_mut()
            .iter_mut()
            .zip(&grads.data)
            .zip(&mut self.moments.m)
            .zip(&mut self.moments.v)
        {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mm = b1 * *m as f64 + (1.0 - b1) * g;
                let vv = b2 * *v as f64 + (1.0 - b2) * g * g;
                *m = mm as f32;
                *v = vv as f32;
                *w -= (step * mm / (vv.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}
