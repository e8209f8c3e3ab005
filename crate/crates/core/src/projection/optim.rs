use serde::{Deserialize, Serialize};

use super::{ModelGrads, ProjectionModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Learning-rate decay applied after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DecaySchedule {
    /// `eta <- eta / (1 + decay * step_count)`
    #[default]
    InverseTime,
    None,
}

impl std::str::FromStr for DecaySchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_time" => Ok(Self::InverseTime),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown decay schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub schedule: DecaySchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            momentum: 0.9,
            decay: 1e-6,
            schedule: DecaySchedule::InverseTime,
        }
    }
}

/// SGD with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    velocity: ModelGrads<F>,
    eta: f64,
    momentum: f64,
    decay: f64,
    schedule: DecaySchedule,
    step_count: u64,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(model: &ProjectionModel<F>, config: SgdConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(config.decay >= 0.0) {
            return Err(Error::Config("decay must be non-negative".into()));
        }
        Ok(Self {
            velocity: model.zeros_like(),
            eta: config.learning_rate,
            momentum: config.momentum,
            decay: config.decay,
            schedule: config.schedule,
            step_count: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn velocity(&self) -> &ModelGrads<F> {
        &self.velocity
    }

    /// One update with gradients summed over a batch of `batch_size` items:
    /// `v <- momentum v - (eta / s) g; theta <- theta + v`, then decay eta.
    ///
    /// A non-finite gradient aborts the step before anything is modified.
    pub fn step(
        &mut self,
        model: &mut ProjectionModel<F>,
        grads: &ModelGrads<F>,
        batch_size: usize,
    ) -> Result<()> {
        if !grads.same_shape(model) || !self.velocity.same_shape(model) {
            return Err(Error::Config("gradient shapes do not match the model".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for (i, t) in grads.tensors().iter().enumerate() {
            if let Some(j) = t.iter().position(|v| !v.is_finite()) {
                let net = if i < 4 { "image" } else { "text" };
                let name = ["w1", "b1", "w2", "b2"][i % 4];
                return Err(Error::NonFiniteGradient(format!("{net}.{name}[{j}]")));
            }
        }
        let mu = F::from_f64_lossy(self.momentum);
        let rate = F::from_f64_lossy(self.eta / batch_size as f64);
        let params = model.tensors_mut();
        let vel = self.velocity.tensors_mut();
        for ((p, v), g) in params.into_iter().zip(vel).zip(grads.tensors()) {
            for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vv = mu * *vv - rate * gv;
                *pv += *vv;
            }
        }
        self.step_count += 1;
        if self.schedule == DecaySchedule::InverseTime {
            self.eta /= 1.0 + self.decay * self.step_count as f64;
        }
        Ok(())
    }
}
