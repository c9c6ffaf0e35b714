use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Update rule applied to descent gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ − lr·g`
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(cfg) => cfg.lr,
        }
    }
}

/// Bias-corrected Adam step on one contiguous block. `step` starts at 1.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct FlatOptimizer {
    rule: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl FlatOptimizer {
    pub fn new(rule: Optimizer, len: usize) -> Self {
        let moments = match rule {
            Optimizer::Sgd { .. } => 0,
            Optimizer::Adam(_) => len,
        };
        Self {
            rule,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        }
    }

    pub fn rule(&self) -> Optimizer {
        self.rule
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match &self.rule {
            Optimizer::Sgd { lr } => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam(cfg) => {
                self.step += 1;
                adam_update(theta, grad, &mut self.m, &mut self.v, self.step, cfg);
            }
        }
    }
}
