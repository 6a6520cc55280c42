//! Low-rank adapters on the attention projections.
//!
//! An adapted projection uses `W + (α/r)·B·A` with `A: r × d_model` and
//! `B: d_model × r`. `B` starts at zero, so a fresh adapter set leaves the
//! base model's outputs untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderWeights;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Attention projection a LoRA pair attaches to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Q,
    K,
    V,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Q, Target::K, Target::V];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    /// Scale numerator; the update is multiplied by `alpha / rank`.
    pub alpha: f64,
    pub init_std: f64,
    /// Layers (0-based) to adapt; `None` adapts every layer.
    pub layers: Option<Vec<usize>>,
    pub targets: Vec<Target>,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 4.0, init_std: 0.02, layers: None, targets: Target::ALL.to_vec(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    pub layer: usize,
    pub target: Target,
    /// `r × d_model`
    pub a: Tensor,
    /// `d_model × r`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapterSet {
    pub rank: usize,
    pub alpha: f64,
    /// Sorted by `(layer, target)`.
    pub pairs: Vec<LoraPair>,
}

impl LoraAdapterSet {
    /// Fresh adapters: `A ~ N(0, init_std²)`, `B = 0`.
    pub fn init(weights: &EncoderWeights, cfg: &LoraConfig) -> Result<Self> {
        if cfg.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        let n_layers = weights.config.n_layers;
        let d = weights.config.d_model;
        let layers: Vec<usize> = cfg.layers.clone().unwrap_or_else(|| (0..n_layers).collect());
        if let Some(&l) = layers.iter().find(|&&l| l >= n_layers) {
            return Err(Error::Config(format!("LoRA layer {l} out of range for {n_layers} layers")));
        }
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut targets = cfg.targets.clone();
        targets.sort();
        targets.dedup();
        let mut pairs = Vec::new();
        for &layer in &layers {
            for &target in &targets {
                let a = Tensor::matrix(cfg.rank, d, (0..cfg.rank * d).map(|_| normal.sample(&mut rng)).collect());
                pairs.push(LoraPair { layer, target, a, b: Tensor::zeros(&[d, cfg.rank]) });
            }
        }
        pairs.sort_by_key(|p| (p.layer, p.target));
        Ok(Self { rank: cfg.rank, alpha: cfg.alpha, pairs })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn get(&self, layer: usize, target: Target) -> Option<&LoraPair> {
        self.pairs.iter().find(|p| p.layer == layer && p.target == target)
    }

    /// `(α/r)·B·A` for one pair.
    pub fn delta(&self, pair: &LoraPair) -> Tensor {
        pair.b.matmul(&pair.a).expect("adapter shapes").scale(self.scale())
    }

    pub fn parameter_count(&self) -> usize {
        self.pairs.iter().map(|p| p.a.numel() + p.b.numel()).sum()
    }

    /// Trainable tensors in a fixed order: for each pair, `A` then `B`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.pairs.iter().flat_map(|p| [&p.a, &p.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.pairs.iter_mut().flat_map(|p| [&mut p.a, &mut p.b]).collect()
    }

    pub fn check_compatible(&self, weights: &EncoderWeights) -> Result<()> {
        let d = weights.config.d_model;
        for p in &self.pairs {
            if p.layer >= weights.config.n_layers {
                return Err(Error::Shape(format!("adapter layer {} beyond encoder depth", p.layer)));
            }
            if p.a.shape() != [self.rank, d] || p.b.shape() != [d, self.rank] {
                return Err(Error::Shape(format!(
                    "adapter ({}, {:?}) has A {:?} / B {:?}, expected {}x{d} / {d}x{}",
                    p.layer,
                    p.target,
                    p.a.shape(),
                    p.b.shape(),
                    self.rank,
                    self.rank
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form LoRA parameter count for `n_layers` adapted layers.
pub fn lora_parameter_count(n_layers: usize, n_targets: usize, rank: usize, d_model: usize) -> usize {
    n_layers * n_targets * 2 * rank * d_model
}

/// Folds adapters into the base weights: `W ← W + (α/r)·B·A`.
pub fn merge_lora(weights: &EncoderWeights, adapters: &LoraAdapterSet) -> Result<EncoderWeights> {
    adapters.check_compatible(weights)?;
    let mut merged = weights.clone();
    for p in &adapters.pairs {
        let delta = adapters.delta(p);
        let layer = &mut merged.layers[p.layer];
        let w = match p.target {
            Target::Q => &mut layer.wq,
            Target::K => &mut layer.wk,
            Target::V => &mut layer.wv,
        };
        for (x, dx) in w.data_mut().iter_mut().zip(delta.data()) {
            *x += dx;
        }
    }
    Ok(merged)
}
