pub mod container;
pub mod encoder;
pub mod error;
pub mod featurize;
pub mod finetune;
pub mod gradcore;
pub mod pipeline;
pub mod probes;
pub mod ridge;
pub mod stats;
pub mod synthdata;

pub use error::{Error, Result};
