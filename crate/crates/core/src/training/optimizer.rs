//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One update of every parameter that has a gradient in `grads`.
///
/// Decay is applied to the parameter first (`θ ← θ − lr·wd·θ`), then the
/// bias-corrected Adam step.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    let (b1, b2) = cfg.betas;
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
        if p.len() != g.len() {
            return Err(Error::shape("adamw_step", format!("`{name}`: parameter has {} values, gradient {}", p.len(), g.len())));
        }
        if let Some((m, _)) = state.moments.get(name) {
            if m.len() != g.len() {
                return Err(Error::shape("adamw_step", format!("`{name}`: moment length {} != {}", m.len(), g.len())));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
        for (((theta, &gi), mi), vi) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *theta -= cfg.lr * cfg.weight_decay * *theta;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
