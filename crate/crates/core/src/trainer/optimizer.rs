use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelState;
use crate::numerics::Tensor;

/// Step decay: `initial` before `decay_epoch`, `decayed` from it onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epoch: usize,
    pub decayed: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.decayed
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        for (field, v) in [("initial", self.initial), ("decayed", self.decayed)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::validation(format!("{key}.{field}"), format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// SGD with momentum and coupled weight decay:
/// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    /// Updates one parameter in place.
    pub fn sgd_step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if lr.is_nan() || lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if param.shape() != grad.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("`{name}`: param {:?} vs grad {:?}", param.shape(), grad.shape()),
            ));
        }
        if !grad.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
        }
        let buf = self
            .buffers
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((p, v), g) in param.data_mut().iter_mut().zip(buf.data_mut()).zip(grad.data()) {
            *v = mu * *v + (g + wd * *p);
            *p -= lr * *v;
        }
        Ok(())
    }

    /// Steps every parameter of `model` selected by `owned`, in canonical order.
    pub fn step_model(
        &mut self,
        model: &mut ModelState,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        owned: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for (name, param) in model.params_mut() {
            if !owned(&name) {
                continue;
            }
            let grad = grads
                .get(&name)
                .ok_or_else(|| Error::invalid(format!("no gradient for `{name}`")))?;
            self.sgd_step(&name, param, grad, lr)?;
        }
        Ok(())
    }
}
