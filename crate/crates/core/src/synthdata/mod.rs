//! Synthetic stimuli, subjects and responses with planted ground truth.
//!
//! Responses are generated from a *teacher* encoder (the base encoder plus
//! a planted low-rank attention change). Auditory-cortex voxels read an
//! early teacher layer, the rest read the last layer. Each voxel's signal
//! is a delay-stacked linear readout of those features plus Gaussian noise,
//! z-scored per story.

mod dataset;
mod roi;
mod story;
mod subject;
mod teacher;

pub use dataset::{make_dataset, teacher_designs, Dataset, NoiseSpec, Split, Story, SubjectData, SynthConfig};
pub use roi::{RoiScope, Rois};
pub use story::{gen_waveform, schedule_tokens, ScheduleConfig, StorySpec, TokenEvent};
pub use subject::{gen_responses, planted_signal, LoadingSpec, SubjectSpec};
pub use teacher::{Teacher, TeacherSpec};
