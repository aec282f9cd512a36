//! Parameter updates.
//!
//! [`apply_gradients`] is the plain SGD step `θ ← θ − lr·g`. [`Optimizer`]
//! adds optional momentum / RMSProp state and global-norm clipping on top.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::net::{GradientSet, Network};

/// `θ ← θ − lr·g` for every parameter block.
pub fn apply_gradients(net: &mut Network, grads: &GradientSet, lr: f64) -> Result<()> {
    let flat = grads.to_flat();
    if flat.len() != net.num_parameters() {
        return shape_err(format!(
            "{} gradient entries for {} parameters",
            flat.len(),
            net.num_parameters()
        ));
    }
    let params: Vec<f64> = net
        .parameters()
        .iter()
        .zip(&flat)
        .map(|(p, g)| p - lr * g)
        .collect();
    net.set_parameters(&params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    RmsProp { decay: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub kind: OptimizerKind,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            lr,
            kind: OptimizerKind::Sgd,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimConfig,
    state: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    /// Applies one update. `grads` is clipped in place when configured.
    pub fn step(&mut self, net: &mut Network, grads: &mut GradientSet) -> Result<()> {
        if let Some(max) = self.config.clip_norm {
            grads.clip_global_norm(max);
        }
        let lr = self.config.lr;
        match self.config.kind {
            OptimizerKind::Sgd => apply_gradients(net, grads, lr),
            OptimizerKind::Momentum { beta } => {
                let g = grads.to_flat();
                self.ensure_state(g.len());
                let mut params = net.parameters();
                if params.len() != g.len() {
                    return shape_err("gradient layout does not match network");
                }
                for ((p, v), gi) in params.iter_mut().zip(&mut self.state).zip(&g) {
                    *v = beta * *v + gi;
                    *p -= lr * *v;
                }
                net.set_parameters(&params)
            }
            OptimizerKind::RmsProp { decay, eps } => {
                let g = grads.to_flat();
                self.ensure_state(g.len());
                let mut params = net.parameters();
                if params.len() != g.len() {
                    return shape_err("gradient layout does not match network");
                }
                for ((p, s), gi) in params.iter_mut().zip(&mut self.state).zip(&g) {
                    *s = decay * *s + (1.0 - decay) * gi * gi;
                    *p -= lr * gi / (s.sqrt() + eps);
                }
                net.set_parameters(&params)
            }
        }
    }

    fn ensure_state(&mut self, n: usize) {
        if self.state.len() != n {
            self.state = vec![0.0; n];
        }
    }
}
