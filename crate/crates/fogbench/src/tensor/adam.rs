//! Adam optimizer with bias-corrected moment estimates.

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    /// The convention of the translation framework all GAN parts follow:
    /// lr 2e-4, betas (0.5, 0.999).
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Holds first/second moment state per parameter. Every step consumes the
/// accumulated gradients and leaves the parameters with none.
pub struct Adam {
    cfg: AdamConfig,
    params: Vec<Param>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: Vec<Param>) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            cfg,
            params,
            m,
            v,
            t: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Applies one update. Fails if any managed parameter is missing its
    /// gradient, which indicates a forward/backward wiring bug.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t);
        for (i, p) in self.params.iter().enumerate() {
            let mut t = p.borrow_mut();
            let g = t
                .take_grad()
                .ok_or_else(|| Error::contract("adam", format!("parameter {i} has no gradient")))?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m).zip(v) {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
