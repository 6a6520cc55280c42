use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{merge_lora, EncoderWeights, LoraAdapterSet, LoraConfig, Target};
use crate::error::{Error, Result};

/// Frozen teacher: the base encoder plus a planted low-rank change to the
/// attention projections of a few layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSpec {
    pub rank: usize,
    /// Planted update is `magnitude·B·A` with unit-variance `B` and
    /// `A ~ N(0, 1/d_model)`.
    pub magnitude: f64,
    /// Magnitude of a further change of the same rank and placement drawn
    /// per subject; 0 gives every subject the same teacher.
    pub private_magnitude: f64,
    /// 0-based encoder layers receiving the planted change.
    pub layers: Vec<usize>,
    pub targets: Vec<Target>,
    /// Hidden-state index read by auditory-cortex voxels.
    pub early_layer: usize,
    /// Hidden-state index read by the remaining voxels.
    pub late_layer: usize,
    pub seed: u64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            rank: 2,
            magnitude: 4.0,
            private_magnitude: 0.0,
            layers: vec![2, 3],
            targets: Target::ALL.to_vec(),
            early_layer: 5,
            late_layer: 9,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Teacher {
    pub weights: EncoderWeights,
    pub planted: LoraAdapterSet,
    pub early_layer: usize,
    pub late_layer: usize,
}

fn planted(base: &EncoderWeights, spec: &TeacherSpec, magnitude: f64, seed: u64) -> Result<LoraAdapterSet> {
    let d = base.config.d_model;
    let cfg = LoraConfig {
        rank: spec.rank,
        alpha: spec.rank as f64,
        init_std: 1.0 / (d as f64).sqrt(),
        layers: Some(spec.layers.clone()),
        targets: spec.targets.clone(),
        seed,
    };
    let mut planted = LoraAdapterSet::init(base, &cfg)?;
    let normal = Normal::new(0.0, magnitude).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for p in &mut planted.pairs {
        p.b.data_mut().iter_mut().for_each(|x| *x = normal.sample(&mut rng));
    }
    Ok(planted)
}

impl Teacher {
    /// The teacher shared by all subjects.
    pub fn build(base: &EncoderWeights, spec: &TeacherSpec) -> Result<Self> {
        let n = base.config.n_layers;
        if spec.early_layer > n || spec.late_layer > n {
            return Err(Error::Config(format!("teacher readout layers must be ≤ {n}")));
        }
        if spec.private_magnitude < 0.0 {
            return Err(Error::Config("private_magnitude must be ≥ 0".into()));
        }
        let planted = planted(base, spec, spec.magnitude, spec.seed)?;
        let weights = merge_lora(base, &planted)?;
        Ok(Self { weights, planted, early_layer: spec.early_layer, late_layer: spec.late_layer })
    }

    /// Teacher of subject `index`: the shared teacher plus that subject's
    /// private change.
    pub fn for_subject(&self, spec: &TeacherSpec, index: usize) -> Result<Self> {
        if spec.private_magnitude == 0.0 {
            return Ok(self.clone());
        }
        let seed = spec.seed.wrapping_add(1000 * (index as u64 + 1));
        let private = planted(&self.weights, spec, spec.private_magnitude, seed)?;
        Ok(Self { weights: merge_lora(&self.weights, &private)?, ..self.clone() })
    }
}
