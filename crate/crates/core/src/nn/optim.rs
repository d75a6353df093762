//! Parameter updates. One optimizer instance owns the Adam moments for every
//! named parameter it has seen; SGD is stateless.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub kind: OptimKind,
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            lr,
            kind: OptimKind::Sgd,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimConfig {
            lr,
            kind: OptimKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }
}

pub struct Optimizer {
    config: OptimConfig,
    step_count: u64,
    moments: HashMap<String, (Matrix, Matrix)>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Self {
        assert!(config.lr > 0.0, "learning rate must be positive");
        Optimizer {
            config,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update over all parameter groups. Rejects non-finite
    /// gradients, naming the offending parameter.
    pub fn step(&mut self, updates: &mut [(&str, &mut Matrix, &Matrix)]) -> Result<()> {
        for (name, param, grad) in updates.iter() {
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            if grad.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    detail: format!("{name}: param {:?} vs grad {:?}", param.shape(), grad.shape()),
                });
            }
        }
        self.step_count += 1;
        for (name, param, grad) in updates.iter_mut() {
            match self.config.kind {
                OptimKind::Sgd => {
                    param.add_scaled(grad, -self.config.lr);
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    let (r, c) = param.shape();
                    let (m, v) = self
                        .moments
                        .entry(name.to_string())
                        .or_insert_with(|| (Matrix::zeros(r, c), Matrix::zeros(r, c)));
                    let t = self.step_count as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for k in 0..r * c {
                        let g = grad.as_slice()[k];
                        let mk = &mut m.as_mut_slice()[k];
                        *mk = beta1 * *mk + (1.0 - beta1) * g;
                        let vk = &mut v.as_mut_slice()[k];
                        *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                        let m_hat = *mk / bc1;
                        let v_hat = *vk / bc2;
                        param.as_mut_slice()[k] -= self.config.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
