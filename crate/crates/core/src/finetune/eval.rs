use crate::encoder::{EncoderWeights, LoraAdapterSet};
use crate::error::Result;
use crate::featurize::{delay_stack, volume_features};
use crate::gradcore::Tensor;
use crate::ridge::{fit_encoding, predict, score_temporal, RidgeFit, VoxelScores};
use crate::stats::{apply_standardization, column_moments};
use crate::synthdata::Dataset;

/// One story's volume-aligned features and its z-scored delayed design.
#[derive(Clone, Debug, PartialEq)]
pub struct StoryFeatures {
    pub volumes: Tensor,
    pub design: Tensor,
    /// Per-story moments of the delayed matrix used for the z-scoring.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StoryFeatures {
    pub fn from_volumes(volumes: Tensor, tr: f64, delays: &[f64]) -> Result<Self> {
        let delayed = delay_stack(&volumes, tr, delays)?;
        let (mean, std) = column_moments(&delayed);
        let design = apply_standardization(&delayed, &mean, &std);
        Ok(Self { volumes, design, mean, std })
    }
}

/// Readout-layer features for every story of the dataset.
pub fn story_features(
    ds: &Dataset,
    weights: &EncoderWeights,
    adapters: Option<&LoraAdapterSet>,
) -> Result<Vec<StoryFeatures>> {
    let cfg = &ds.config;
    let layer = weights.config.readout_layer;
    ds.stories
        .iter()
        .map(|s| {
            let volumes =
                volume_features(weights, adapters, &s.wave, &cfg.featurize, &s.volume_times(cfg.tr), &[layer])?.remove(0);
            StoryFeatures::from_volumes(volumes, cfg.tr, &cfg.featurize.delays)
        })
        .collect()
}

pub(crate) fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    Ok(Tensor::vstack(parts)?)
}

/// Encoding model re-fit on the training stories and its scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub fit: RidgeFit,
    /// Per-voxel correlation over the concatenated validation stories.
    pub val: VoxelScores,
    /// Per-voxel correlation on the test story.
    pub test: VoxelScores,
}

/// Fits ridge on the training stories of `responses` and scores the
/// validation and test stories.
pub fn fit_and_score(ds: &Dataset, responses: &[Tensor], feats: &[StoryFeatures]) -> Result<Evaluation> {
    let rows = |idx: &[usize]| -> Result<(Tensor, Tensor)> {
        Ok((
            stack(&idx.iter().map(|&i| &feats[i].design).collect::<Vec<_>>())?,
            stack(&idx.iter().map(|&i| &responses[i]).collect::<Vec<_>>())?,
        ))
    };
    let (x, y) = rows(&ds.split.train)?;
    let fit = fit_encoding(&x, &y, &ds.config.cv)?;
    let score = |idx: &[usize]| -> Result<VoxelScores> {
        let (x, y) = rows(idx)?;
        score_temporal(&y, &predict(&fit, &x)?)
    };
    let val = score(&ds.split.val)?;
    let test = score(&ds.split.test)?;
    Ok(Evaluation { fit, val, test })
}
