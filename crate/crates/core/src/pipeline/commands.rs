use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::stage::Stage;
use super::{fmt6, pct_improvement, pool, RunConfig};
use crate::container::Container;
use crate::encoder::checkpoint::{adapters_from_container, save_adapters, weights_from_container, weights_to_container};
use crate::encoder::{merge_lora, EncoderWeights};
use crate::error::{Error, Result};
use crate::featurize::{volume_features, FeatureFile};
use crate::finetune::{fit_and_score, run_finetune, story_features, Evaluation, StoryFeatures};
use crate::probes::{probe_csv, probe_sweep};
use crate::ridge::VoxelScores;
use crate::synthdata::{make_dataset, Dataset, RoiScope, Rois};

/// Scopes reported by `eval`.
pub const EVAL_SCOPES: [RoiScope; 5] = [RoiScope::All, RoiScope::Ac, RoiScope::NonAc, RoiScope::Left, RoiScope::Right];
/// Scopes of the transfer matrices.
pub const TRANSFER_SCOPES: [RoiScope; 3] = [RoiScope::All, RoiScope::Ac, RoiScope::NonAc];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScopeScores {
    pub val: f64,
    pub test: f64,
}

/// Pre-trained encoding performance of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub subject: String,
    pub val_rho: Vec<f64>,
    pub test_rho: Vec<f64>,
    /// Voxel means per ROI scope.
    pub scopes: BTreeMap<RoiScope, ScopeScores>,
}

fn scope_means(rois: &Rois, val: &VoxelScores, test: &VoxelScores, scopes: &[RoiScope]) -> BTreeMap<RoiScope, ScopeScores> {
    scopes
        .iter()
        .map(|&s| {
            let idx = rois.indices(s);
            (s, ScopeScores { val: val.mean_over(&idx), test: test.mean_over(&idx) })
        })
        .collect()
}

impl BaselineRecord {
    pub fn from_evaluation(subject: &str, rois: &Rois, ev: &Evaluation) -> Self {
        Self {
            subject: subject.to_string(),
            val_rho: ev.val.rho.clone(),
            test_rho: ev.test.rho.clone(),
            scopes: scope_means(rois, &ev.val, &ev.test, &EVAL_SCOPES),
        }
    }

    pub fn test_mean(&self, scope: RoiScope) -> Result<f64> {
        self.scopes
            .get(&scope)
            .map(|s| s.test)
            .ok_or_else(|| Error::Data(format!("baseline of {} lacks scope {scope}", self.subject)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub train_subject: String,
    pub test_subject: String,
    pub scope: RoiScope,
    pub rho_pretrained: f64,
    pub rho_model: f64,
    pub pct_improvement: f64,
}

/// Percent improvement of each fine-tuned model on each test subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// ROI the models were fine-tuned on.
    pub roi: RoiScope,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub cells: Vec<TransferCell>,
}

impl TransferReport {
    /// Rows are train subjects, columns test subjects.
    pub fn matrix(&self, scope: RoiScope) -> Vec<Vec<f64>> {
        self.train_subjects
            .iter()
            .map(|tr| {
                self.test_subjects
                    .iter()
                    .map(|te| {
                        self.cells
                            .iter()
                            .find(|c| &c.train_subject == tr && &c.test_subject == te && c.scope == scope)
                            .map_or(f64::NAN, |c| c.pct_improvement)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("train_subject,test_subject,scope,rho_pretrained,rho_model,pct_improvement\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.train_subject,
                c.test_subject,
                c.scope,
                fmt6(c.rho_pretrained),
                fmt6(c.rho_model),
                fmt6(c.pct_improvement)
            ));
        }
        s
    }
}

/// Scores encoder `weights` on every `(model, test subject)` pair; the
/// baseline of each test subject comes from `baselines`.
pub fn transfer_report(
    ds: &Dataset,
    roi: RoiScope,
    models: &[(String, EncoderWeights)],
    test_subjects: &[String],
    baselines: &[BaselineRecord],
) -> Result<TransferReport> {
    let pool = pool()?;
    let feats: Vec<Vec<StoryFeatures>> =
        pool.install(|| models.par_iter().map(|(_, w)| story_features(ds, w, None)).collect::<Result<_>>())?;
    let pairs: Vec<(usize, usize)> =
        (0..models.len()).flat_map(|m| (0..test_subjects.len()).map(move |t| (m, t))).collect();
    let evals: Vec<Evaluation> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(m, t)| fit_and_score(ds, &ds.subject(&test_subjects[t])?.responses, &feats[m]))
            .collect::<Result<_>>()
    })?;
    let mut cells = Vec::new();
    for (&(m, t), ev) in pairs.iter().zip(&evals) {
        let test = &test_subjects[t];
        let base = baselines
            .iter()
            .find(|b| &b.subject == test)
            .ok_or_else(|| Error::Data(format!("no baseline for subject {test}")))?;
        let rois = &ds.subject(test)?.rois;
        for scope in TRANSFER_SCOPES {
            let pre = base.test_mean(scope)?;
            let model = ev.test.mean_over(&rois.indices(scope));
            cells.push(TransferCell {
                train_subject: models[m].0.clone(),
                test_subject: test.clone(),
                scope,
                rho_pretrained: pre,
                rho_model: model,
                pct_improvement: pct_improvement(model, pre),
            });
        }
    }
    Ok(TransferReport {
        roi,
        train_subjects: models.iter().map(|m| m.0.clone()).collect(),
        test_subjects: test_subjects.to_vec(),
        cells,
    })
}

pub(crate) fn dataset_checksum(dir: &Path) -> Result<String> {
    let p = dir.join("manifest.json");
    let v: Value = serde_json::from_slice(&fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
    v["checksum"].as_str().map(str::to_string).ok_or_else(|| Error::Format("dataset manifest lacks checksum".into()))
}

fn load(cfg: &RunConfig) -> Result<(Dataset, String)> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(Error::Data(format!("no dataset at {}; run gen first", dir.display())));
    }
    Ok((Dataset::read(&dir)?, dataset_checksum(&dir)?))
}

fn write_manifest(cfg: &RunConfig, command: &str, checksum: &str) -> Result<()> {
    let m = json!({
        "command": command,
        "dataset": cfg.dataset_dir(),
        "dataset_checksum": checksum,
        "seeds": {
            "run": cfg.seed,
            "synth": cfg.synth.seed,
            "encoder": cfg.synth.encoder.seed,
            "teacher": cfg.synth.teacher.seed,
            "train": cfg.train.seed,
            "lora": cfg.train.lora.seed,
            "probe_embedding": cfg.probe.embedding_seed,
        },
        "config": cfg,
    });
    let p = cfg.out.join("manifests").join(format!("{command}.json"));
    fs::create_dir_all(p.parent().expect("has parent")).map_err(|e| Error::io(&p, e))?;
    fs::write(&p, serde_json::to_vec_pretty(&m)?).map_err(|e| Error::io(&p, e))
}

fn pick_subjects(ds: &Dataset, wanted: &[String]) -> Result<Vec<String>> {
    if wanted.is_empty() {
        return Ok(ds.subjects.iter().map(|s| s.id.clone()).collect());
    }
    for w in wanted {
        ds.subject(w)?;
    }
    Ok(wanted.to_vec())
}

fn run_dir(cfg: &RunConfig, subject: &str, roi: RoiScope) -> PathBuf {
    cfg.out.join("runs").join(subject).join(roi.as_str())
}

/// Best encoder of a finished run, adapters merged in.
pub(crate) fn load_run_model(ds: &Dataset, dir: &Path) -> Result<EncoderWeights> {
    let p = dir.join("best.bin");
    if !p.exists() {
        return Err(Error::Data(format!("missing checkpoint {}", p.display())));
    }
    let c = Container::read(&p)?;
    if c.kind == "lora_adapters" {
        let (adapters, config) = adapters_from_container(&c)?;
        let base = ds.base_encoder()?;
        if config != base.config {
            return Err(Error::Data(format!("{} was trained on a different encoder", p.display())));
        }
        merge_lora(&base, &adapters)
    } else {
        weights_from_container(&c)
    }
}

fn read_baseline(cfg: &RunConfig, subject: &str) -> Result<BaselineRecord> {
    let p = cfg.out.join("baseline").join(format!("{subject}.json"));
    if !p.exists() {
        return Err(Error::Data(format!("no baseline for {subject}; run fit first")));
    }
    Ok(serde_json::from_slice(&fs::read(&p).map_err(|e| Error::io(&p, e))?)?)
}

/// `(subject, roi, dir)` of finished runs, sorted.
pub(crate) fn finished_runs(cfg: &RunConfig) -> Result<Vec<(String, RoiScope, PathBuf)>> {
    let root = cfg.out.join("runs");
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    let mut subjects: Vec<_> = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?.flatten().map(|e| e.path()).collect();
    subjects.sort();
    for s in subjects.into_iter().filter(|p| p.is_dir()) {
        let Some(subject) = s.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
        let mut rois: Vec<_> = fs::read_dir(&s).map_err(|e| Error::io(&s, e))?.flatten().map(|e| e.path()).collect();
        rois.sort();
        for r in rois {
            let Some(roi) = r.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<RoiScope>().ok()) else {
                continue;
            };
            if r.join("best.json").exists() {
                out.push((subject.clone(), roi, r));
            }
        }
    }
    Ok(out)
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Value> {
    let ds = make_dataset(&cfg.synth)?;
    let stage = Stage::new(cfg.dataset_dir())?;
    let checksum = ds.write(&stage.dir)?;
    let dir = stage.commit()?;
    write_manifest(cfg, "gen", &checksum)?;
    Ok(json!({
        "command": "gen",
        "dataset": dir,
        "checksum": checksum,
        "stories": ds.stories.len(),
        "split": {"train": ds.split.train.len(), "val": ds.split.val.len(), "test": ds.split.test.len()},
        "subjects": ds.subjects.iter().map(|s| json!({"id": s.id, "voxels": s.rois.n_voxels(), "sigma": s.sigma})).collect::<Vec<_>>(),
    }))
}

pub fn cmd_features(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let base = ds.base_encoder()?;
    let layer = base.config.readout_layer;
    let source = base.checksum();
    let stage = Stage::new(cfg.out.join("features"))?;
    let files: Vec<FeatureFile> = pool()?.install(|| {
        ds.stories
            .par_iter()
            .map(|s| {
                let m = volume_features(&base, None, &s.wave, &ds.config.featurize, &s.volume_times(ds.tr()), &[layer])?;
                Ok(FeatureFile {
                    matrix: m.into_iter().next().expect("one layer"),
                    tr: ds.tr(),
                    delays: Vec::new(),
                    layer,
                    source_model_checksum: source.clone(),
                })
            })
            .collect::<Result<_>>()
    })?;
    for (s, f) in ds.stories.iter().zip(&files) {
        f.write(stage.path(format!("{}.bin", s.spec.id)))?;
    }
    stage.commit()?;
    write_manifest(cfg, "features", &checksum)?;
    Ok(json!({"command": "features", "stories": files.len(), "layer": layer, "model_checksum": source}))
}

fn read_features(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<StoryFeatures>> {
    let expect = ds.base_encoder()?.checksum();
    ds.stories
        .iter()
        .map(|s| {
            let p = cfg.out.join("features").join(format!("{}.bin", s.spec.id));
            if !p.exists() {
                return Err(Error::Data(format!("missing {}; run features first", p.display())));
            }
            let f = FeatureFile::read(&p)?;
            if f.source_model_checksum != expect {
                return Err(Error::Data(format!("{} comes from a different encoder", p.display())));
            }
            StoryFeatures::from_volumes(f.matrix, ds.tr(), &ds.config.featurize.delays)
        })
        .collect()
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let feats = read_features(cfg, &ds)?;
    let stage = Stage::new(cfg.out.join("baseline"))?;
    let mut summary = Vec::new();
    for sub in &ds.subjects {
        let ev = fit_and_score(&ds, &sub.responses, &feats)?;
        let rec = BaselineRecord::from_evaluation(&sub.id, &sub.rois, &ev);
        stage.write(format!("{}.json", sub.id), serde_json::to_vec_pretty(&rec)?)?;
        ev.fit.write(stage.path(format!("{}.ridge.bin", sub.id)))?;
        summary.push(json!({"subject": sub.id, "val_rho": ev.val.mean(), "test_rho": ev.test.mean()}));
    }
    stage.commit()?;
    write_manifest(cfg, "fit", &checksum)?;
    Ok(json!({"command": "fit", "subjects": summary}))
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let subjects = pick_subjects(&ds, &cfg.train_subjects)?;
    let mut stages = Vec::new();
    let mut summary = Vec::new();
    for subject in &subjects {
        let stage = Stage::new(run_dir(cfg, subject, cfg.roi))?;
        let run = run_finetune(&ds, subject, &cfg.train, Some(&stage.dir))?;
        match &run.best_adapters {
            Some(a) => save_adapters(stage.path("best.bin"), a, &ds.config.encoder)?,
            None => weights_to_container(&run.best_weights).write(stage.path("best.bin"))?,
        }
        let pre = run.baseline.test.mean();
        let post = run.best.test.mean();
        summary.push(json!({
            "subject": subject,
            "roi": cfg.roi,
            "best_epoch": run.best_epoch,
            "val_rho": run.best.val.mean(),
            "test_rho": post,
            "baseline_test_rho": pre,
            "pct_improvement": pct_improvement(post, pre),
        }));
        stages.push(stage);
    }
    for s in stages {
        s.commit()?;
    }
    write_manifest(cfg, "finetune", &checksum)?;
    Ok(json!({"command": "finetune", "runs": summary}))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let runs = finished_runs(cfg)?;
    if runs.is_empty() {
        return Err(Error::Data("no runs found; run finetune first".into()));
    }
    let stage = Stage::new(cfg.out.join("eval"))?;
    let mut csv = String::from("subject,train_roi,scope,rho_pretrained,rho_model,pct_improvement\n");
    let mut summary = Vec::new();
    for (subject, roi, dir) in &runs {
        let weights = load_run_model(&ds, dir)?;
        let sub = ds.subject(subject)?;
        let base = read_baseline(cfg, subject)?;
        let ev = fit_and_score(&ds, &sub.responses, &story_features(&ds, &weights, None)?)?;
        let scopes = scope_means(&sub.rois, &ev.val, &ev.test, &EVAL_SCOPES);
        let mut rows = Vec::new();
        for (scope, s) in &scopes {
            let pre = base.test_mean(*scope)?;
            let pct = pct_improvement(s.test, pre);
            csv.push_str(&format!("{subject},{roi},{scope},{},{},{}\n", fmt6(pre), fmt6(s.test), fmt6(pct)));
            rows.push(json!({"scope": scope, "rho_pretrained": pre, "rho_model": s.test, "pct_improvement": pct}));
        }
        let detail = json!({"subject": subject, "train_roi": roi, "test_rho": ev.test.rho, "val_rho": ev.val.rho, "scopes": rows});
        stage.write(format!("{subject}_{roi}.json"), serde_json::to_vec_pretty(&detail)?)?;
        summary.push(json!({"subject": subject, "train_roi": roi, "scopes": rows}));
    }
    stage.write("eval.csv", &csv)?;
    stage.commit()?;
    write_manifest(cfg, "eval", &checksum)?;
    Ok(json!({"command": "eval", "runs": summary}))
}

pub fn cmd_transfer(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let train = pick_subjects(&ds, &cfg.train_subjects)?;
    let test = pick_subjects(&ds, &cfg.test_subjects)?;
    let models = train
        .iter()
        .map(|s| Ok((s.clone(), load_run_model(&ds, &run_dir(cfg, s, cfg.roi))?)))
        .collect::<Result<Vec<_>>>()?;
    let baselines = test.iter().map(|s| read_baseline(cfg, s)).collect::<Result<Vec<_>>>()?;
    let report = transfer_report(&ds, cfg.roi, &models, &test, &baselines)?;
    let stage = Stage::new(cfg.out.join("transfer").join(cfg.roi.as_str()))?;
    stage.write("matrix.csv", report.csv())?;
    stage.write("matrix.json", serde_json::to_vec_pretty(&report)?)?;
    stage.commit()?;
    write_manifest(cfg, "transfer", &checksum)?;
    let matrices: BTreeMap<String, Vec<Vec<f64>>> =
        TRANSFER_SCOPES.iter().map(|&s| (s.as_str().to_string(), report.matrix(s))).collect();
    Ok(json!({"command": "transfer", "roi": cfg.roi, "train": train, "test": test, "pct_improvement": matrices}))
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<Value> {
    let (ds, checksum) = load(cfg)?;
    let base = ds.base_encoder()?;
    let models = finished_runs(cfg)?
        .into_iter()
        .map(|(s, r, dir)| Ok((format!("{s}_{r}"), load_run_model(&ds, &dir)?)))
        .collect::<Result<Vec<_>>>()?;
    let cells = probe_sweep(&ds, &base, &models, &cfg.probe)?;
    let stage = Stage::new(cfg.out.join("probes"))?;
    stage.write("probes.csv", probe_csv(&cells))?;
    stage.commit()?;
    write_manifest(cfg, "probe", &checksum)?;
    Ok(json!({
        "command": "probe",
        "models": std::iter::once(crate::probes::PRETRAINED_ID.to_string()).chain(models.iter().map(|m| m.0.clone())).collect::<Vec<_>>(),
        "cells": cells.len(),
    }))
}
