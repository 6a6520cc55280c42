use serde::{Deserialize, Serialize};

use crate::encoder::LoraConfig;
use crate::error::{Error, Result};
use crate::synthdata::RoiScope;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Subject responses.
    Brain,
    /// Teacher hidden states as pseudo-voxels.
    TeacherFeatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to 0 over all steps.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_trs: usize,
    pub target_kind: TargetKind,
    pub roi: RoiScope,
    pub use_lora: bool,
    /// Defaults to cosine when `use_lora` is false.
    pub lr_schedule: Option<LrSchedule>,
    pub lora: LoraConfig,
    /// Bottleneck rank of the trainable head, clipped to `min(P', |V|)`.
    pub head_rank: usize,
    /// Run the validation re-fit every this many epochs (the last epoch is
    /// always evaluated).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 20,
            batch_trs: 50,
            target_kind: TargetKind::Brain,
            roi: RoiScope::All,
            use_lora: true,
            lr_schedule: None,
            lora: LoraConfig::default(),
            head_rank: 100,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_trs < 2 {
            return Err(Error::Config(format!("batch_trs {} must be at least 2", self.batch_trs)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.head_rank == 0 || self.eval_every == 0 {
            return Err(Error::Config("head_rank and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        self.lr_schedule.unwrap_or(if self.use_lora { LrSchedule::Constant } else { LrSchedule::Cosine })
    }

    /// Learning rate for optimizer step `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule() {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}
