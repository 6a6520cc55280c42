use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::{train_epoch, Standardizer, TrainStory, TrainableModel};
use super::{fit_and_score, story_features, AdamState, Evaluation, TargetKind, TrainConfig};
use crate::encoder::checkpoint::save_adapters;
use crate::encoder::{merge_lora, BottleneckHead, EncoderWeights, LoraAdapterSet};
use crate::error::{Error, Result};
use crate::featurize::{design_matrix, volume_features};
use crate::gradcore::Tensor;
use crate::ridge::fit_encoding;
use crate::stats::zscore_columns;
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean batch loss over the epoch; absent for the untrained epoch 0.
    pub train_loss: Option<f64>,
    /// Voxel-mean validation correlation of the re-fit encoding model;
    /// absent on epochs skipped by `eval_every`.
    pub val_rho: Option<f64>,
    pub test_rho: Option<f64>,
    pub degenerate_volumes: usize,
    pub wall_s: f64,
}

/// Epoch with the highest validation correlation; ties go to the earliest.
pub fn select_best_epoch(reports: &[EpochReport]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in reports {
        if let Some(v) = r.val_rho {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r.epoch, v));
            }
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::Data("no evaluated epochs to select from".into()))
}

/// Teacher hidden states as pseudo-voxels, z-scored per story.
pub fn build_teacher_targets(volumes: &[Tensor], n_volumes: &[usize]) -> Result<Vec<Tensor>> {
    if volumes.len() != n_volumes.len() {
        return Err(Error::Shape(format!("{} teacher matrices for {} stories", volumes.len(), n_volumes.len())));
    }
    volumes
        .iter()
        .zip(n_volumes)
        .map(|(v, &n)| {
            if v.rows() != n {
                return Err(Error::Shape(format!("teacher features have {} rows, story has {n} volumes", v.rows())));
            }
            Ok(zscore_columns(v))
        })
        .collect()
}

/// Outcome of a fine-tuning run.
#[derive(Clone, Debug)]
pub struct FinetuneRun {
    pub subject: String,
    pub config: TrainConfig,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    /// Adapters of the best epoch (LoRA runs).
    pub best_adapters: Option<LoraAdapterSet>,
    /// Encoder of the best epoch with any adapters merged in.
    pub best_weights: EncoderWeights,
    pub baseline: Evaluation,
    pub best: Evaluation,
}

fn targets_for(ds: &Dataset, subject: &str, cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    let sub = ds.subject(subject)?;
    match cfg.target_kind {
        TargetKind::Brain => {
            let cols = sub.rois.indices(cfg.roi);
            if cols.len() < 2 {
                return Err(Error::Config(format!("ROI {} has fewer than two voxels", cfg.roi)));
            }
            Ok(sub.responses.iter().map(|r| r.select_cols(&cols)).collect())
        }
        TargetKind::TeacherFeatures => {
            let teacher = ds.teacher()?;
            let vols = ds
                .stories
                .iter()
                .map(|s| {
                    Ok(volume_features(
                        &teacher.weights,
                        None,
                        &s.wave,
                        &ds.config.featurize,
                        &s.volume_times(ds.tr()),
                        &[teacher.late_layer],
                    )?
                    .remove(0))
                })
                .collect::<Result<Vec<_>>>()?;
            build_teacher_targets(&vols, &ds.stories.iter().map(|s| s.n_volumes).collect::<Vec<_>>())
        }
    }
}

struct Sink<'a> {
    dir: &'a Path,
}

impl Sink<'_> {
    fn report(&self, r: &EpochReport) -> Result<()> {
        let path = self.dir.join("epochs.jsonl");
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&self, epoch: usize, model: &TrainableModel) -> Result<()> {
        match &model.adapters {
            Some(a) => save_adapters(self.dir.join(format!("adapters/epoch_{epoch:02}.bin")), a, &model.base.config),
            None => crate::encoder::checkpoint::weights_to_container(&model.base)
                .write(self.dir.join(format!("weights/epoch_{epoch:02}.bin"))),
        }
    }
}

fn current_weights(model: &TrainableModel) -> Result<EncoderWeights> {
    match &model.adapters {
        Some(a) => merge_lora(&model.base, a),
        None => Ok(model.base.clone()),
    }
}

/// Everything a training run mutates, plus the epoch-0 evaluation.
pub struct TrainSession {
    pub model: TrainableModel,
    pub norm: Standardizer,
    pub stories: Vec<TrainStory>,
    pub adam: AdamState,
    pub baseline: Evaluation,
}

/// Epoch-0 state: base encoder, fresh adapters, and a head initialized from
/// a ridge fit of the training targets on pre-trained features.
pub fn prepare_session(ds: &Dataset, subject: &str, cfg: &TrainConfig) -> Result<TrainSession> {
    cfg.validate()?;
    let base = ds.base_encoder()?;
    let responses = &ds.subject(subject)?.responses;
    let adapters = if cfg.use_lora { Some(LoraAdapterSet::init(&base, &cfg.lora)?) } else { None };
    let feats = story_features(ds, &base, adapters.as_ref())?;
    let baseline = fit_and_score(ds, responses, &feats)?;
    let targets = targets_for(ds, subject, cfg)?;
    let train_idx = &ds.split.train;
    let x = Tensor::vstack(&train_idx.iter().map(|&i| &feats[i].design).collect::<Vec<_>>())?;
    let y = Tensor::vstack(&train_idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
    let head_fit = fit_encoding(&x, &y, &ds.config.cv)?;
    let head = BottleneckHead::from_full(&head_fit.beta, cfg.head_rank)?;
    let norm = Standardizer::new(&feats, &head_fit);
    let frozen = if cfg.use_lora { Some(&base.frame_proj) } else { None };
    let stories = train_idx
        .iter()
        .map(|&i| TrainStory::new(ds, i, targets[i].clone(), frozen))
        .collect::<Result<Vec<_>>>()?;
    let model = TrainableModel { base, adapters, head };
    let adam = AdamState::new(&model.params(cfg.use_lora));
    Ok(TrainSession { model, norm, stories, adam, baseline })
}

/// Fine-tunes on one subject. Epoch 0 is the untouched model; every
/// evaluated epoch re-extracts features, re-fits ridge on the training
/// stories and scores validation and test stories over all voxels.
pub fn run_finetune(ds: &Dataset, subject: &str, cfg: &TrainConfig, out: Option<&Path>) -> Result<FinetuneRun> {
    let sink = match out {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join("epochs.jsonl");
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            Some(Sink { dir: d })
        }
        None => None,
    };
    let t0 = Instant::now();
    let responses = &ds.subject(subject)?.responses;
    let TrainSession { mut model, mut norm, stories, mut adam, baseline } = prepare_session(ds, subject, cfg)?;
    let mut reports = vec![EpochReport {
        epoch: 0,
        train_loss: None,
        val_rho: Some(baseline.val.mean()),
        test_rho: Some(baseline.test.mean()),
        degenerate_volumes: 0,
        wall_s: t0.elapsed().as_secs_f64(),
    }];
    if let Some(s) = &sink {
        s.report(&reports[0])?;
        s.checkpoint(0, &model)?;
    }
    let mut best = (0usize, baseline.val.mean(), model.clone(), baseline.clone());
    let per_epoch = super::train::blocks(&stories, cfg.batch_trs).len();
    let total_steps = per_epoch * cfg.epochs;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let t = Instant::now();
        let (loss, degenerate) =
            train_epoch(ds, cfg, &mut model, &norm, &stories, &mut adam, epoch, &mut step, total_steps)?;
        let mut report =
            EpochReport { epoch, train_loss: Some(loss), val_rho: None, test_rho: None, degenerate_volumes: degenerate, wall_s: 0.0 };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let feats = story_features(ds, &model.base, model.adapters.as_ref())?;
            let ev = fit_and_score(ds, responses, &feats)?;
            norm.refresh(&feats);
            let v = ev.val.mean();
            report.val_rho = Some(v);
            report.test_rho = Some(ev.test.mean());
            if v > best.1 {
                best = (epoch, v, model.clone(), ev);
            }
        }
        report.wall_s = t.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {loss:.4} val {:?}", report.val_rho);
        if let Some(s) = &sink {
            s.report(&report)?;
            s.checkpoint(epoch, &model)?;
        }
        reports.push(report);
    }
    let best_epoch = select_best_epoch(&reports)?;
    debug_assert_eq!(best_epoch, best.0);
    let best_weights = current_weights(&best.2)?;
    if let Some(s) = &sink {
        let summary = serde_json::json!({
            "subject": subject,
            "best_epoch": best_epoch,
            "val_rho": best.1,
            "test_rho": best.3.test.mean(),
            "baseline_val_rho": baseline.val.mean(),
            "baseline_test_rho": baseline.test.mean(),
        });
        let p = s.dir.join("best.json");
        fs::write(&p, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(FinetuneRun {
        subject: subject.to_string(),
        config: cfg.clone(),
        reports,
        best_epoch,
        best_adapters: best.2.adapters.clone(),
        best_weights,
        baseline,
        best: best.3,
    })
}

/// Design matrices of the delayed, z-scored readout for each story.
pub fn designs_for(ds: &Dataset, weights: &EncoderWeights) -> Result<Vec<Tensor>> {
    ds.stories
        .iter()
        .map(|s| {
            let v = volume_features(
                weights,
                None,
                &s.wave,
                &ds.config.featurize,
                &s.volume_times(ds.tr()),
                &[weights.config.readout_layer],
            )?
            .remove(0);
            design_matrix(&v, ds.tr(), &ds.config.featurize.delays)
        })
        .collect()
}
