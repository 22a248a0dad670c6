use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, NumericError, ParamId, ParamStore};

/// Momentum SGD hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global L2 norm bound applied to the raw gradient before the step.
    pub gradient_clip: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, momentum: 0.9, weight_decay: 0.0005, gradient_clip: 1.0 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NumericError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.gradient_clip > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NumericError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Whether a step lowers or raises the objective whose gradient is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Momentum SGD over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sgd {
    config: SgdConfig,
    learning_rate: f64,
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self, NumericError> {
        config.validate()?;
        Ok(Self { config, learning_rate: config.learning_rate, velocity: BTreeMap::new() })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// One update of `params`. A parameter absent from `grads` is treated as
    /// having a zero gradient (weight decay and momentum still apply).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        params: &[ParamId],
        direction: Direction,
    ) -> Result<StepInfo, NumericError> {
        for &id in params {
            if let Some(g) = grads.param(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(NumericError::ShapeMismatch {
                        op: "sgd_step",
                        lhs: store.get(id).shape(),
                        rhs: g.shape(),
                    });
                }
            }
        }
        let grad_norm = params
            .iter()
            .filter_map(|&id| grads.param(id))
            .map(|g| g.squared_norm())
            .sum::<f64>()
            .sqrt();
        let clipped = grad_norm > self.config.gradient_clip;
        let scale = if clipped { self.config.gradient_clip / grad_norm } else { 1.0 } * direction.sign();

        let SgdConfig { momentum, weight_decay, .. } = self.config;
        for &id in params {
            let value = store.get_mut(id);
            let vel = self.velocity.entry(id).or_insert_with(|| vec![0.0; value.len()]);
            let grad = grads.param(id).map(|g| g.data());
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g[j]) * scale + weight_decay * *w;
                vel[j] = momentum * vel[j] + g;
                *w -= self.learning_rate * vel[j];
            }
        }
        Ok(StepInfo { grad_norm, clipped })
    }
}
