use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 1e-4 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted as a frozen-step probe; negative or NaN is not.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// One update over every parameter, then zeroes the gradients:
///
/// ```text
/// g   ← grad + weight_decay·value   (decay-flagged parameters only)
/// buf ← momentum·buf + g
/// value ← value − lr·buf
/// ```
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, cfg: &OptimizerConfig) {
    let lr = T::from_f64(cfg.learning_rate);
    let mu = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    for p in params.params_mut() {
        let decay = p.decay && cfg.weight_decay != 0.0;
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let buf = p.momentum_buf.data_mut();
        for ((v, g), b) in value.iter_mut().zip(grad.iter_mut()).zip(buf.iter_mut()) {
            let step = if decay { *g + wd * *v } else { *g };
            *b = mu * *b + step;
            if cfg.learning_rate != 0.0 {
                *v = *v - lr * *b;
            }
            *g = T::zero();
        }
    }
}
