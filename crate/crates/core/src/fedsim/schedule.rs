use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` at each milestone, given as fractions of the
    /// total rounds.
    Step {
        #[serde(default = "default_milestones")]
        milestones: Vec<f64>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Cosine decay toward zero over the run.
    Cosine,
}

fn default_milestones() -> Vec<f64> {
    vec![150.0 / 400.0, 250.0 / 400.0]
}
fn default_gamma() -> f64 {
    0.1
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    /// Clients contacted per round; all when unset.
    pub participants: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Probability that a contacted client drops out before uploading.
    pub dropout: f64,
    /// Softmax over the client's present classes only.
    pub masked_loss: bool,
    pub eval_every: usize,
    pub eval_batch: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            rounds: 50,
            local_epochs: 1,
            lr: 0.05,
            lr_schedule: LrSchedule::Constant,
            batch_size: 32,
            participants: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            dropout: 0.0,
            masked_loss: true,
            eval_every: 1,
            eval_batch: 256,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self, clients: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("schedule.lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("schedule.batch_size and schedule.eval_batch must be >= 1".into());
        }
        if let Some(m) = self.participants {
            if m == 0 || m > clients {
                return bad(format!("schedule.participants = {m} must be in 1..={clients}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("schedule.momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("schedule.weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("schedule.dropout {} outside [0, 1)", self.dropout));
        }
        if self.eval_every == 0 {
            return bad("schedule.eval_every must be >= 1".into());
        }
        if let LrSchedule::Step { milestones, gamma } = &self.lr_schedule {
            if !(gamma.is_finite() && *gamma > 0.0) || milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return bad("schedule.lr_schedule: gamma must be > 0 and milestones in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Learning rate for 0-based round `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let total = self.rounds.max(1) as f64;
        match &self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step { milestones, gamma } => {
                let passed = milestones.iter().filter(|&&m| t as f64 >= m * total).count();
                self.lr * gamma.powi(passed as i32)
            }
            LrSchedule::Cosine => self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total).cos()),
        }
    }
}
