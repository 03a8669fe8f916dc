//! First-order optimizers with inverse-time learning-rate decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub const RMSPROP_RHO: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct OptimizerState<S = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    pub step_count: u64,
    accumulators: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be finite and >= 0")));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::Config(format!("decay {decay} must be finite and >= 0")));
        }
        Ok(Self {
            kind,
            learning_rate,
            decay,
            step_count: 0,
            accumulators: BTreeMap::new(),
        })
    }

    /// `lr / (1 + decay * step_count)`.
    pub fn current_lr(&self) -> f64 {
        self.learning_rate / (1.0 + self.decay * self.step_count as f64)
    }

    pub fn accumulator(&self, name: &str) -> Option<&[S]> {
        self.accumulators.get(name).map(Vec::as_slice)
    }

    /// Applies one update to every `(name, parameter, gradient)` triple.
    ///
    /// Nothing is modified when any gradient holds a NaN or infinity.
    pub fn step<'a>(&mut self, entries: Vec<(&'a str, &'a mut Tensor<S>, &'a Tensor<S>)>) -> Result<()> {
        for (name, p, g) in &entries {
            if p.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.to_string(),
                    step: self.step_count,
                });
            }
        }
        let lr = S::lit(self.current_lr());
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, p, g) in entries {
                    for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
                        *p = *p - lr * g;
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                let rho = S::lit(RMSPROP_RHO);
                let eps = S::lit(RMSPROP_EPSILON);
                for (name, p, g) in entries {
                    let acc = self
                        .accumulators
                        .entry(name.to_string())
                        .or_insert_with(|| vec![S::zero(); g.len()]);
                    for ((p, &g), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
                        *a = rho * *a + (S::one() - rho) * g * g;
                        *p = *p - lr * g / (a.sqrt() + eps);
                    }
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
