//! Stimulus featurization: sliding windows, per-window encoder readout,
//! Lanczos resampling onto the volume grid and FIR delay stacking.
//!
//! Window timestamps are window *end* times: the readout is the final
//! frame, which has seen the audio up to that instant.

mod delay;
mod extract;
mod io;
mod lanczos;
mod waveform;
mod windows;

pub use delay::{delay_shifts, delay_stack, shift_stack, shifted_rows, DEFAULT_DELAYS};
pub use extract::{extract_features, extract_layers, WindowedFeatures};
pub use io::{FeatureFile, FEATURE_KIND};
pub use lanczos::{lanczos_kernel, lanczos_resample, lanczos_weights, support_ranges, LanczosConfig};
pub use waveform::Waveform;
pub use windows::{slide_windows, Segment, WindowPlan};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderWeights, LoraAdapterSet};
use crate::error::Result;
use crate::gradcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeConfig {
    pub window_s: f64,
    pub stride_s: f64,
    pub delays: Vec<f64>,
    pub lanczos: LanczosConfig,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self { window_s: 2.0, stride_s: 0.1, delays: DEFAULT_DELAYS.to_vec(), lanczos: LanczosConfig::default() }
    }
}

/// Volume capture times `(i + 1)·tr` for `n` volumes.
pub fn volume_times(n: usize, tr: f64) -> Vec<f64> {
    (1..=n).map(|i| i as f64 * tr).collect()
}

/// Waveform → windows → layer readout → volume grid, one matrix per layer.
pub fn volume_features(
    weights: &EncoderWeights,
    adapters: Option<&LoraAdapterSet>,
    wave: &Waveform,
    cfg: &FeaturizeConfig,
    target_times: &[f64],
    layers: &[usize],
) -> Result<Vec<Tensor>> {
    let plan = slide_windows(wave, cfg.window_s, cfg.stride_s)?;
    let per_layer = extract_layers(weights, adapters, wave, &plan, layers)?;
    let w = lanczos_weights(&plan.times(), target_times, &cfg.lanczos)?;
    per_layer.into_iter().map(|f| Ok(w.matmul(&f.matrix)?)).collect()
}

/// Encoding-model design for one story: delay stack, then per-story
/// column z-scoring.
pub fn design_matrix(volumes: &Tensor, tr: f64, delays: &[f64]) -> Result<Tensor> {
    Ok(crate::stats::zscore_columns(&delay_stack(volumes, tr, delays)?))
}

#[cfg(test)]
mod tests;
