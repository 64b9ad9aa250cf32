//! Stochastic gradient descent with classical momentum.

use serde::{Deserialize, Serialize};

use super::{Gradients, Network, Param, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 15,
            seed: 0,
            dropout_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::InvalidParam {
                field,
                reason: reason.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be non-negative and finite");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", "must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One update of a single parameter array:
/// `v = momentum * v - lr * (g + wd * w); w += v`.
pub fn sgd_step<T: Real>(w: &mut [T], g: &[T], v: &mut [T], cfg: &TrainConfig) -> Result<()> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(Error::LengthMismatch(w.len(), g.len().min(v.len())));
    }
    if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("gradient value {bad:?}")));
    }
    let (lr, mu, wd) = (T::of(cfg.learning_rate), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - lr * (g + wd * *w);
        *w += *v;
    }
    Ok(())
}

/// Optimizer state for a whole network.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: TrainConfig,
    velocity: Gradients<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: net.zero_gradients(),
        })
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (i, (p, (g, v))) in net
            .params_mut()
            .iter_mut()
            .zip(grads.params.iter().zip(self.velocity.params.iter_mut()))
            .enumerate()
        {
            match (p, g, v) {
                (Some(p), Some(g), Some(v)) => update(p, g, v, &self.config)?,
                (None, None, None) => {}
                _ => return Err(Error::shape(format!("parameters of layer {i}"), "gradient layout")),
            }
        }
        Ok(())
    }
}

fn update<T: Real>(p: &mut Param<T>, g: &Param<T>, v: &mut Param<T>, cfg: &TrainConfig) -> Result<()> {
    sgd_step(&mut p.weight, &g.weight, &mut v.weight, cfg)?;
    sgd_step(&mut p.bias, &g.bias, &mut v.bias, cfg)
}
