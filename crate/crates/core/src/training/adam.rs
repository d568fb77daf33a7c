//! Adam with bias correction, operating on the flat tensor views shared with
//! the gradient buffers.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::training::backprop::Gradients;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates plus the step counter.
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: Gradients::zeros_like(params), v: Gradients::zeros_like(params), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update in place. Rejects non-finite gradients
    /// before touching the parameters, so an aborted step leaves everything
    /// unchanged.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient, step aborted".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        let mut p = params.tensors_mut();
        let g = grads.tensors();
        let mut m = self.m.tensors_mut();
        let mut v = self.v.tensors_mut();
        debug_assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            let (pi, gi) = (&mut p[i], g[i]);
            let (mi, vi) = (&mut m[i], &mut v[i]);
            for j in 0..gi.len() {
                mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * gi[j];
                vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * gi[j] * gi[j];
                let m_hat = mi[j] / bc1;
                let v_hat = vi[j] / bc2;
                pi[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
