use crate::error::{GradError, Result};
use crate::params::{ParamGrads, ParamGroup, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Current learning rate of each parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub intra_shared: f64,
    pub inter: f64,
}

impl GroupRates {
    pub fn uniform(lr: f64) -> Self {
        GroupRates {
            intra_shared: lr,
            inter: lr,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::IntraShared => self.intra_shared,
            ParamGroup::Inter => self.inter,
        }
    }
}

/// One bias-corrected Adam update for every parameter present in `grads`.
///
/// Each parameter keeps its own step counter, so parameters that skip a
/// batch (no gradient) are not bias-corrected as if they had stepped.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, rates: &GroupRates, cfg: &AdamConfig) -> Result<()> {
    for (id, g) in grads.iter() {
        if id.0 >= store.len() {
            return Err(GradError::InvalidArgument {
                op: "adam_step",
                detail: format!("gradient for unknown parameter id {}", id.0),
            });
        }
        let p = store.get_mut(id);
        if p.value.shape() != g.shape() {
            return Err(GradError::ShapeMismatch {
                op: "adam_step",
                lhs: p.value.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let lr = rates.get(p.group);
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
        for (((w, m), v), g) in value.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if !p.value.all_finite() {
            return Err(GradError::NonFinite { op: "adam_step" });
        }
    }
    Ok(())
}
