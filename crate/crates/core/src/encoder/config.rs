use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the desk-scale audio encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Transformer layers kept after truncation.
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub sample_rate: u32,
    /// Samples per input window.
    pub window_samples: usize,
    /// Samples per frame of the strided frame projection.
    pub frame_size: usize,
    pub frame_stride: usize,
    /// Init std of the frame projection is `frame_gain / √frame_size`.
    pub frame_gain: f64,
    /// Layer whose final-frame state feeds the encoding model.
    pub readout_layer: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 9,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            sample_rate: 1000,
            window_samples: 2000,
            frame_size: 400,
            frame_stride: 400,
            frame_gain: 16.0,
            readout_layer: 9,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model < 2 || self.n_heads == 0 || self.d_ff == 0 {
            return bad(format!(
                "layers={}, d_model={}, heads={}, d_ff={} must all be positive (d_model >= 2)",
                self.n_layers, self.d_model, self.n_heads, self.d_ff
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.readout_layer > self.n_layers {
            return bad(format!("readout layer {} exceeds n_layers {}", self.readout_layer, self.n_layers));
        }
        if !(self.frame_gain > 0.0 && self.frame_gain.is_finite()) {
            return bad(format!("frame_gain {} must be positive", self.frame_gain));
        }
        if self.sample_rate == 0 || self.frame_size == 0 || self.frame_stride == 0 {
            return bad("sample rate and frame sizes must be positive".into());
        }
        if self.frame_size > self.window_samples {
            return bad(format!("frame {} longer than window {}", self.frame_size, self.window_samples));
        }
        if (self.window_samples - self.frame_size) % self.frame_stride != 0 {
            return bad("frames must tile the window exactly".into());
        }
        Ok(())
    }

    pub fn frames_per_window(&self) -> usize {
        (self.window_samples - self.frame_size) / self.frame_stride + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_samples as f64 / self.sample_rate as f64
    }
}
