use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `θ ← θ − lr·wd·θ` after the gradient step.
    Decoupled,
    /// `wd·θ` added to the gradient before the step (L2 regularization).
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Applied to weight matrices only.
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            decay_mode: DecayMode::Decoupled,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("optimizer.{field}"), reason))
            }
        };
        check(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be finite and >= 0")?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must be in [0, 1)")?;
        check(self.epsilon > 0.0, "epsilon", "must be > 0")?;
        check(self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay", "must be finite and >= 0")
    }
}

/// What a parameter tensor is, which decides whether weight decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scalar,
}

/// One parameter tensor and its gradient for a single update. A missing
/// gradient counts as zero.
pub struct ParamSlot<'a> {
    pub role: ParamRole,
    pub values: &'a mut [f64],
    pub grad: Option<&'a [f64]>,
}

/// Optimizer with per-slot moment buffers. Slots must be passed in the same
/// order and with the same sizes on every step.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    settings: OptimizerSettings,
    step: u64,
    first_moments: Vec<Vec<f64>>,
    second_moments: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            settings,
            step: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        }
    }

    pub fn settings(&self) -> &OptimizerSettings {
        &self.settings
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for slot in slots.iter() {
            if let Some(g) = slot.grad {
                if g.len() != slot.values.len() {
                    return Err(Error::shape("adam_step", slot.values.len(), g.len()));
                }
            }
        }
        if self.first_moments.is_empty() {
            self.first_moments = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.second_moments = self.first_moments.clone();
        } else if self.first_moments.len() != slots.len()
            || self.first_moments.iter().zip(slots.iter()).any(|(m, s)| m.len() != s.values.len())
        {
            return Err(Error::shape(
                "adam_step",
                format!("{} slots as on the first step", self.first_moments.len()),
                slots.len(),
            ));
        }

        self.step += 1;
        let OptimizerSettings {
            kind,
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay: wd,
            decay_mode,
        } = self.settings;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for (k, slot) in slots.iter_mut().enumerate() {
            let decays = wd > 0.0 && slot.role == ParamRole::Weight;
            let coupled = decays && decay_mode == DecayMode::Coupled;
            let m = &mut self.first_moments[k];
            let v = &mut self.second_moments[k];
            for i in 0..slot.values.len() {
                let theta = slot.values[i];
                let mut g = slot.grad.map_or(0.0, |g| g[i]);
                if coupled {
                    g += wd * theta;
                }
                let update = match kind {
                    OptimizerKind::Sgd => g,
                    OptimizerKind::Adam => {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / correction1;
                        let v_hat = v[i] / correction2;
                        m_hat / (v_hat.sqrt() + epsilon)
                    }
                };
                let mut next = theta - lr * update;
                if decays && decay_mode == DecayMode::Decoupled {
                    next -= lr * wd * next;
                }
                slot.values[i] = next;
            }
        }
        Ok(())
    }
}
