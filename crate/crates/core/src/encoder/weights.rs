use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::EncoderConfig;
use crate::error::Result;
use crate::gradcore::Tensor;

/// Parameters of one post-norm transformer layer.
///
/// Projection matrices are stored `out × in`; a row batch `x` maps to
/// `x · Wᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ff_in: Tensor,
    pub ff_out: Tensor,
    pub norm1_gain: Tensor,
    pub norm1_bias: Tensor,
    pub norm2_gain: Tensor,
    pub norm2_bias: Tensor,
}

const LAYER_PARAM_NAMES: [&str; 10] =
    ["wq", "wk", "wv", "wo", "ff_in", "ff_out", "norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias"];

impl LayerWeights {
    fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ff_in,
            &self.ff_out,
            &self.norm1_gain,
            &self.norm1_bias,
            &self.norm2_gain,
            &self.norm2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ff_in,
            &mut self.ff_out,
            &mut self.norm1_gain,
            &mut self.norm1_bias,
            &mut self.norm2_gain,
            &mut self.norm2_bias,
        ]
    }
}

/// Base (pre-trained) encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    /// `d_model × frame_size`.
    pub frame_proj: Tensor,
    pub input_gain: Tensor,
    pub input_bias: Tensor,
    pub layers: Vec<LayerWeights>,
    /// Set while LoRA training; the optimizer never touches frozen weights.
    pub frozen: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let n = Normal::new(0.0, std).expect("positive std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect())
}

impl EncoderWeights {
    /// Seeded pseudo-random initialization; projections use std `1/√fan_in`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let frame_proj = gaussian(&mut rng, d, config.frame_size, config.frame_gain / (config.frame_size as f64).sqrt());
        let layers = (0..config.n_layers)
            .map(|_| {
                let s = 1.0 / (d as f64).sqrt();
                LayerWeights {
                    wq: gaussian(&mut rng, d, d, s),
                    wk: gaussian(&mut rng, d, d, s),
                    wv: gaussian(&mut rng, d, d, s),
                    wo: gaussian(&mut rng, d, d, s),
                    ff_in: gaussian(&mut rng, config.d_ff, d, s),
                    ff_out: gaussian(&mut rng, d, config.d_ff, 1.0 / (config.d_ff as f64).sqrt()),
                    norm1_gain: Tensor::filled(&[d], 1.0),
                    norm1_bias: Tensor::zeros(&[d]),
                    norm2_gain: Tensor::filled(&[d], 1.0),
                    norm2_bias: Tensor::zeros(&[d]),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            frame_proj,
            input_gain: Tensor::filled(&[d], 1.0),
            input_bias: Tensor::zeros(&[d]),
            layers,
            frozen: false,
        })
    }

    /// All parameters in a fixed order (frame projection, input norm, then
    /// each layer).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.frame_proj, &self.input_gain, &self.input_bias];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.frame_proj, &mut self.input_gain, &mut self.input_bias];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out
    }

    /// Names matching [`EncoderWeights::tensors`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["frame_proj".to_string(), "input_gain".into(), "input_bias".into()];
        for i in 0..self.layers.len() {
            for n in LAYER_PARAM_NAMES {
                out.push(format!("layer{i}.{n}"));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// SHA-256 over the little-endian bytes of every parameter, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
