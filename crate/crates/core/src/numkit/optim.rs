use serde::{Deserialize, Serialize};

use super::{check_finite, NumError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimKind {
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn momentum() -> Self {
        OptimKind::Momentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` every `interval` steps.
    StepDecay {
        factor: f64,
        interval: u64,
    },
    /// Multiply the rate by `factor` once the epoch loss has not improved
    /// for `patience` consecutive epochs.
    Plateau {
        factor: f64,
        patience: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimKind,
    pub schedule: Schedule,
    base_lr: f64,
    lr: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
    best_epoch_loss: f64,
    stale_epochs: u32,
}

impl OptimizerState {
    pub fn new(kind: OptimKind, lr: f64, schedule: Schedule, num_params: usize) -> Result<Self, NumError> {
        if !(lr > 0.0) {
            return Err(NumError::Contract("learning rate must be positive"));
        }
        let second = match kind {
            OptimKind::Adam { .. } => vec![0.0; num_params],
            OptimKind::Momentum { .. } => Vec::new(),
        };
        Ok(OptimizerState {
            kind,
            schedule,
            base_lr: lr,
            lr,
            step: 0,
            first: vec![0.0; num_params],
            second,
            best_epoch_loss: f64::INFINITY,
            stale_epochs: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NumError> {
        if grads.len() != params.len() || params.len() != self.first.len() {
            return Err(NumError::Shape {
                op: "OptimizerState::step",
                expected: self.first.len(),
                got: grads.len(),
            });
        }
        check_finite(grads, "gradient")?;
        self.step += 1;
        match self.kind {
            OptimKind::Momentum { momentum } => {
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    *vel = momentum * *vel + g;
                    *p -= self.lr * *vel;
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        if let Schedule::StepDecay { factor, interval } = self.schedule {
            if interval > 0 && self.step.is_multiple_of(interval) {
                self.lr *= factor;
            }
        }
        Ok(())
    }

    /// Feed an epoch loss to a plateau schedule. Returns true if the rate
    /// was reduced.
    pub fn end_epoch(&mut self, loss: f64) -> bool {
        let Schedule::Plateau { factor, patience } = self.schedule else {
            return false;
        };
        if loss < self.best_epoch_loss {
            self.best_epoch_loss = loss;
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= patience {
            self.lr *= factor;
            self.stale_epochs = 0;
            return true;
        }
        false
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }
}
