//! First-order optimizers with per-tensor state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescales any single tensor gradient whose Frobenius norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(CicadaError::BadConfig(format!("invalid {what} optimizer settings")))
        }
    }
}

/// Identifies one trainable tensor across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKey {
    Domain {
        expert: usize,
        domain: usize,
        tensor: usize,
    },
    Projection {
        expert: usize,
        tensor: usize,
    },
    Fusion(usize),
    Alpha {
        expert: usize,
        domain: usize,
    },
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: HashMap<ParamKey, Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// One descent step on `value` along `grad`.
    pub fn step(&mut self, key: ParamKey, value: &mut Matrix, grad: &Matrix) -> Result<()> {
        if value.shape() != grad.shape() {
            return Err(crate::numerics::NumericsError::ShapeMismatch {
                op: "optimizer step",
                left: value.shape(),
                right: grad.shape(),
            }
            .into());
        }
        let scale = match self.config.clip_norm {
            Some(c) => {
                let n = grad.frobenius();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.apply(key, value.as_mut_slice(), grad.as_slice(), scale);
        Ok(())
    }

    pub fn step_scalar(&mut self, key: ParamKey, value: &mut f64, grad: f64) {
        let mut v = [*value];
        self.apply(key, &mut v, &[grad], 1.0);
        *value = v[0];
    }

    /// Drops all state whose key satisfies `pred`.
    pub fn forget(&mut self, pred: impl Fn(&ParamKey) -> bool) {
        self.state.retain(|k, _| !pred(k));
    }

    fn apply(&mut self, key: ParamKey, value: &mut [f64], grad: &[f64], scale: f64) {
        let c = &self.config;
        match c.kind {
            OptimizerKind::Sgd => {
                for (x, g) in value.iter_mut().zip(grad) {
                    *x -= c.lr * scale * g;
                }
            }
            OptimizerKind::Adam => {
                let st = self.state.entry(key).or_insert_with(|| Moments {
                    m: vec![0.0; grad.len()],
                    v: vec![0.0; grad.len()],
                    t: 0,
                });
                if st.m.len() != grad.len() {
                    *st = Moments {
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                        t: 0,
                    };
                }
                st.t += 1;
                let bc1 = 1.0 - c.beta1.powi(st.t);
                let bc2 = 1.0 - c.beta2.powi(st.t);
                for i in 0..grad.len() {
                    let g = grad[i] * scale;
                    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
                    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
                    let mh = st.m[i] / bc1;
                    let vh = st.v[i] / bc2;
                    value[i] -= c.lr * mh / (vh.sqrt() + c.eps);
                }
            }
        }
    }
}
