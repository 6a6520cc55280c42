//! LoRA fine-tuning of the encoder against brain (or teacher) targets
//! with a spatial-correlation loss, plus epoch-wise re-fit evaluation.

mod adam;
mod config;
mod eval;
mod loss;
mod run;
pub mod train;

pub use adam::AdamState;
pub use config::{LrSchedule, TargetKind, TrainConfig};
pub use eval::{fit_and_score, story_features, Evaluation, StoryFeatures};
pub use loss::{spatial_corr_loss, SpatialCorrLoss};
pub use run::{
    build_teacher_targets, designs_for, prepare_session, run_finetune, select_best_epoch, EpochReport, FinetuneRun,
    TrainSession,
};

#[cfg(test)]
mod tests;
