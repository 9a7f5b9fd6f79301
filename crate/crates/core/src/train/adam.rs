use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterSet};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "AdamConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.map_or(true, |c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
            clip_norm: None,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Fails on the first NaN or infinite gradient entry, naming its parameter.
pub fn check_finite(grads: &Gradients) -> Result<()> {
    for (name, g) in grads.iter() {
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: name.to_owned(),
                index,
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParameterSet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Contract("parameter, gradient and moment layouts differ".into()));
    }
    check_finite(grads)?;
    let c = state.config;
    let scale = match c.clip_norm {
        Some(limit) => {
            let norm = grads
                .iter()
                .flat_map(|(_, g)| g.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                limit / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let g = g.data()[i] * scale;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
    Ok(())
}
