use std::collections::BTreeMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gradient descent with heavy-ball momentum and optional global-norm clipping.
///
/// `v ← μ v + g`, `θ ← θ − lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub max_grad_norm: Option<f64>,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            max_grad_norm: None,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    /// Applies one update and returns the gradient norm before clipping.
    /// Parameters without a gradient entry are left untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<f64> {
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let factor = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        for (name, g) in grads {
            let p = store.get_mut(name).ok_or_else(|| {
                Error::InvalidArgument(format!("gradient for unknown parameter {name}"))
            })?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((vi, gi), pi) in v.iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = self.momentum * *vi + factor * gi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(norm)
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
