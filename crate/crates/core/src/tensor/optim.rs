//! Stochastic gradient descent with classical momentum and L2 weight decay.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

/// Update rule per parameter tensor:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
///
/// Velocity buffers persist across calls; the first call allocates them.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArg(format!("learning rate {lr} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArg(format!(
                "momentum {momentum} must lie in [0, 1)"
            )));
        }
        if weight_decay < 0.0 {
            return Err(Error::InvalidArg(format!(
                "weight decay {weight_decay} must be >= 0"
            )));
        }
        Ok(SgdMomentum {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// One update over a fixed parameter list. The list order and shapes must
    /// stay identical across calls so velocity state lines up.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArg(format!(
                "optimizer got {} parameter tensors but {} gradient buffers",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::InvalidArg(
                "parameter list changed length across optimizer steps".into(),
            ));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if param.numel() != grad.len() || vel.len() != grad.len() {
                return Err(Error::ShapeMismatch {
                    op: "sgd-momentum",
                    lhs: param.shape.clone(),
                    rhs: vec![grad.len()],
                });
            }
            for ((p, &g), v) in param.data.iter_mut().zip(*grad).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g + self.weight_decay * *p;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}
