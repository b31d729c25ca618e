use crate::error::{Error, Result};
use crate::model::checkpoint::OptimizerState;

/// Adam with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`, with
    /// the arithmetic carried out in f64.
    pub fn update(&self, params: &mut [f32], grads: &[f32], state: &mut OptimizerState, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
            return Err(Error::invalid("optimizer state does not match the parameter count"));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            let g = g as f64;
            let mn = self.beta1 * *m as f64 + (1.0 - self.beta1) * g;
            let vn = self.beta2 * *v as f64 + (1.0 - self.beta2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let step = (mn / c1) / ((vn / c2).sqrt() + self.eps) + self.weight_decay * *p as f64;
            *p = (*p as f64 - lr * step) as f32;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { site: "parameter update".into() });
        }
        Ok(())
    }
}
