use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, SpatialCorrLoss, StoryFeatures, TrainConfig};
use crate::encoder::model::{encode, final_frames, BoundEncoder, BoundLora, FrameInput, FrameTable};
use crate::encoder::{BottleneckHead, EncoderWeights, LoraAdapterSet};
use crate::error::{Error, Result};
use crate::featurize::{delay_shifts, lanczos_weights, slide_windows, support_ranges};
use crate::gradcore::{Graph, Tensor, Var};
use crate::ridge::RidgeFit;
use crate::synthdata::Dataset;

/// Everything fixed about one training story: frames, resampling weights
/// and the target matrix.
pub struct TrainStory {
    pub index: usize,
    table: FrameTable,
    /// Frame embeddings when the frame projection is frozen.
    embedded: Option<Tensor>,
    starts: Vec<usize>,
    lanczos: Tensor,
    support: Vec<(usize, usize)>,
    pub targets: Tensor,
}

impl TrainStory {
    pub fn new(ds: &Dataset, index: usize, targets: Tensor, frozen_proj: Option<&Tensor>) -> Result<Self> {
        let cfg = &ds.config;
        let story = &ds.stories[index];
        let plan = slide_windows(&story.wave, cfg.featurize.window_s, cfg.featurize.stride_s)?;
        let starts = plan.starts();
        let table = FrameTable::new(&cfg.encoder, &story.wave.samples, &starts)?;
        let embedded = match frozen_proj {
            Some(p) => Some(table.samples.matmul_t(p)?),
            None => None,
        };
        let lanczos = lanczos_weights(&plan.times(), &story.volume_times(cfg.tr), &cfg.featurize.lanczos)?;
        let support = support_ranges(&lanczos);
        if targets.rows() != story.n_volumes {
            return Err(Error::Shape(format!(
                "story {} has {} volumes but {} target rows",
                story.spec.id,
                story.n_volumes,
                targets.rows()
            )));
        }
        Ok(Self { index, table, embedded, starts, lanczos, support, targets })
    }

    pub fn n_volumes(&self) -> usize {
        self.targets.rows()
    }
}

/// Parameters touched by training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableModel {
    pub base: EncoderWeights,
    pub adapters: Option<LoraAdapterSet>,
    pub head: BottleneckHead,
}

impl TrainableModel {
    /// Trainable tensors: adapters (or all encoder weights) then the head.
    pub fn params(&self, use_lora: bool) -> Vec<&Tensor> {
        let mut out = match (&self.adapters, use_lora) {
            (Some(a), true) => a.tensors(),
            _ => self.base.tensors(),
        };
        out.extend(self.head.tensors());
        out
    }

    pub fn params_mut(&mut self, use_lora: bool) -> Vec<&mut Tensor> {
        let mut out = match (&mut self.adapters, use_lora) {
            (Some(a), true) => a.tensors_mut(),
            _ => self.base.tensors_mut(),
        };
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Feature standardization applied inside the graph: the per-story
/// z-scoring of the delayed matrix, then the encoding fit's own scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub story: Vec<(Vec<f64>, Vec<f64>)>,
    pub fit_mean: Vec<f64>,
    pub fit_scale: Vec<f64>,
}

fn inv(s: &[f64]) -> Vec<f64> {
    s.iter().map(|&x| if x > 0.0 { 1.0 / x } else { 0.0 }).collect()
}

impl Standardizer {
    pub fn new(feats: &[StoryFeatures], fit: &RidgeFit) -> Self {
        Self {
            story: feats.iter().map(|f| (f.mean.clone(), f.std.clone())).collect(),
            fit_mean: fit.x_mean.clone(),
            fit_scale: fit.x_scale.clone(),
        }
    }

    pub fn refresh(&mut self, feats: &[StoryFeatures]) {
        self.story = feats.iter().map(|f| (f.mean.clone(), f.std.clone())).collect();
    }
}

/// Loss and gradients for one contiguous block of volumes.
pub struct BatchResult {
    pub loss: f64,
    pub degenerate: usize,
    /// Same order as [`TrainableModel::params`].
    pub grads: Vec<Tensor>,
    pub prediction: Tensor,
}

/// Builds the full differentiable path for volumes `[b0, b1)` of `story`:
/// windows → encoder → final-frame readout → Lanczos → delays →
/// standardization → head → spatial-correlation loss.
pub fn batch_loss(
    ds: &Dataset,
    cfg: &TrainConfig,
    model: &TrainableModel,
    norm: &Standardizer,
    story: &TrainStory,
    b0: usize,
    b1: usize,
    columns: Option<&[usize]>,
) -> Result<BatchResult> {
    let ecfg = &model.base.config;
    let shifts = delay_shifts(ds.config.tr, &ds.config.featurize.delays)?;
    let max_shift = shifts.iter().copied().max().unwrap_or(0);
    if b0 >= b1 || b1 > story.n_volumes() {
        return Err(Error::Shape(format!("bad batch [{b0}, {b1}) for {} volumes", story.n_volumes())));
    }
    let v0 = b0.saturating_sub(max_shift);
    let lo = story.support[v0..b1].iter().map(|s| s.0).min().expect("non-empty");
    let hi = story.support[v0..b1].iter().map(|s| s.1).max().expect("non-empty");
    let use_lora = cfg.use_lora && model.adapters.is_some();

    let mut g = Graph::new();
    let enc = BoundEncoder::bind(&mut g, &model.base, !use_lora);
    let lora = match &model.adapters {
        Some(a) => Some(BoundLora::bind(&mut g, a, use_lora)),
        None => None,
    };
    let down = g.param(model.head.down.clone());
    let up = g.param(match columns {
        Some(c) => model.head.up.select_cols(c),
        None => model.head.up.clone(),
    });
    let input = match (&story.embedded, use_lora) {
        (Some(e), true) => FrameInput::Embedded(g.constant(e.clone())),
        _ => FrameInput::Samples(g.constant(story.table.samples.clone())),
    };
    let rows = story.table.rows_for(&story.starts[lo..hi])?;
    let hidden = encode(&mut g, ecfg, &enc, lora.as_ref(), input, rows, ecfg.readout_layer)?;
    let feats = final_frames(&mut g, hidden[ecfg.readout_layer], ecfg.frames_per_window())?;
    let lz: Vec<usize> = (lo..hi).collect();
    let lz = story.lanczos.select_rows(&(v0..b1).collect::<Vec<_>>()).select_cols(&lz);
    let lz = g.constant(lz);
    let vol = g.matmul(lz, feats)?;
    let blocks = shifts
        .iter()
        .map(|&s| g.gather_rows(vol, (b0..b1).map(|t| t.checked_sub(s).map(|u| u - v0)).collect()))
        .collect::<std::result::Result<Vec<Var>, _>>()?;
    let x = g.concat_cols(&blocks)?;
    let (m, s) = &norm.story[story.index];
    let x = g.col_affine(x, m, &inv(s))?;
    let x = g.col_affine(x, &norm.fit_mean, &inv(&norm.fit_scale))?;
    let h = g.matmul(x, down)?;
    let pred = g.matmul(h, up)?;
    let block_rows: Vec<usize> = (b0..b1).collect();
    let target = story.targets.select_rows(&block_rows);
    let target = match columns {
        Some(c) => target.select_cols(c),
        None => target,
    };
    let target = g.constant(target);
    let loss = g.custom(Box::new(SpatialCorrLoss::default()), &[pred, target])?;
    let loss_value = g.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss on story {} volumes [{b0}, {b1})", story.index)));
    }
    let (_, degenerate) = super::spatial_corr_loss(g.value(target), g.value(pred))?;
    let grads = g.backward(loss)?;
    let mut vars: Vec<Var> = match (&lora, use_lora) {
        (Some(l), true) => l.vars(),
        _ => enc.vars(),
    };
    vars.extend([down, up]);
    Ok(BatchResult {
        loss: loss_value,
        degenerate,
        grads: vars.into_iter().map(|v| grads.wrt(v).clone()).collect(),
        prediction: g.value(pred).clone(),
    })
}

/// Mean batch loss over all blocks without updating anything.
pub fn mean_loss(
    ds: &Dataset,
    cfg: &TrainConfig,
    model: &TrainableModel,
    norm: &Standardizer,
    stories: &[TrainStory],
) -> Result<f64> {
    let bl = blocks(stories, cfg.batch_trs);
    let mut total = 0.0;
    for &(si, b0, b1) in &bl {
        total += batch_loss(ds, cfg, model, norm, &stories[si], b0, b1, None)?.loss;
    }
    Ok(total / bl.len() as f64)
}

/// Contiguous blocks of at most `batch_trs` volumes per story.
pub fn blocks(stories: &[TrainStory], batch_trs: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (si, s) in stories.iter().enumerate() {
        let mut b0 = 0;
        while b0 < s.n_volumes() {
            let b1 = (b0 + batch_trs).min(s.n_volumes());
            out.push((si, b0, b1));
            b0 = b1;
        }
    }
    out
}

/// Block order for an epoch, shuffled from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// One pass over all blocks. Returns the mean batch loss (measured before
/// each update) and the number of zero-variance volumes seen.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    ds: &Dataset,
    cfg: &TrainConfig,
    model: &mut TrainableModel,
    norm: &Standardizer,
    stories: &[TrainStory],
    adam: &mut AdamState,
    epoch: usize,
    step: &mut usize,
    total_steps: usize,
) -> Result<(f64, usize)> {
    let bl = blocks(stories, cfg.batch_trs);
    let use_lora = cfg.use_lora && model.adapters.is_some();
    let mut total = 0.0;
    let mut degenerate = 0;
    for &bi in &epoch_order(bl.len(), cfg.seed, epoch) {
        let (si, b0, b1) = bl[bi];
        let res = batch_loss(ds, cfg, model, norm, &stories[si], b0, b1, None)?;
        total += res.loss;
        degenerate += res.degenerate;
        let lr = cfg.lr_at(*step, total_steps);
        adam.update(model.params_mut(use_lora), &res.grads.iter().collect::<Vec<_>>(), lr)?;
        *step += 1;
        if model.params(use_lora).iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged(format!("parameters became non-finite at epoch {epoch}")));
        }
    }
    Ok((total / bl.len() as f64, degenerate))
}
