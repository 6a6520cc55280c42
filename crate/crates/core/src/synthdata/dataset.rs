use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    gen_responses, gen_waveform, planted_signal, schedule_tokens, LoadingSpec, Rois, ScheduleConfig, StorySpec,
    SubjectSpec, Teacher, TeacherSpec,
};
use crate::container::Container;
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::featurize::{design_matrix, volume_features, volume_times, FeaturizeConfig, Waveform};
use crate::gradcore::Tensor;
use crate::ridge::{fit_encoding, predict, score_temporal, CvConfig};
use crate::stats::sha256_hex;

/// Noise level: either fixed, or solved so that the pre-trained encoder
/// reaches roughly `target_pretrained_rho` on validation stories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma: Option<f64>,
    pub target_pretrained_rho: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma: None, target_pretrained_rho: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stories: usize,
    pub story_duration_s: f64,
    pub tr: f64,
    pub schedule: ScheduleConfig,
    pub n_subjects: usize,
    pub n_voxels: usize,
    pub n_ac: usize,
    pub loading: LoadingSpec,
    pub teacher: TeacherSpec,
    pub noise: NoiseSpec,
    pub encoder: EncoderConfig,
    pub featurize: FeaturizeConfig,
    pub cv: CvConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_stories: 12,
            story_duration_s: 120.0,
            tr: 2.0,
            schedule: ScheduleConfig::default(),
            n_subjects: 3,
            n_voxels: 200,
            n_ac: 40,
            loading: LoadingSpec::default(),
            teacher: TeacherSpec::default(),
            noise: NoiseSpec::default(),
            encoder: EncoderConfig::default(),
            featurize: FeaturizeConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

impl SynthConfig {
    /// A two-layer, few-story configuration that builds in about a second.
    pub fn small() -> Self {
        let d = Self::default();
        Self {
            n_stories: 6,
            story_duration_s: 40.0,
            n_subjects: 2,
            n_voxels: 24,
            n_ac: 6,
            teacher: TeacherSpec { layers: vec![0, 1], early_layer: 1, late_layer: 2, ..d.teacher },
            encoder: EncoderConfig { n_layers: 2, readout_layer: 2, ..d.encoder },
            cv: CvConfig { n_folds: 3, chunk_length: 10, ..d.cv },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let max_delay = self.featurize.delays.iter().cloned().fold(0.0, f64::max);
        if self.story_duration_s < self.featurize.window_s + max_delay {
            return Err(Error::Config(format!(
                "stories of {}s are shorter than window plus maximum delay",
                self.story_duration_s
            )));
        }
        if self.n_stories < 4 {
            return Err(Error::Config(format!("need at least 4 stories, got {}", self.n_stories)));
        }
        if self.n_subjects == 0 || self.n_voxels < 2 {
            return Err(Error::Config("need at least one subject with two voxels".into()));
        }
        if (self.featurize.window_s * self.encoder.sample_rate as f64).round() as usize != self.encoder.window_samples {
            return Err(Error::Config("featurize window does not match encoder window".into()));
        }
        Ok(())
    }

    pub fn n_volumes(&self) -> usize {
        (self.story_duration_s / self.tr + 1e-9).floor() as usize
    }

    pub fn story_id(k: usize) -> String {
        format!("story{k:02}")
    }

    pub fn subject_id(s: usize) -> String {
        format!("S{}", s + 1)
    }
}

/// Story indices per partition: one test story, two validation stories,
/// the rest for training. Assigned by sorted story id: the last id is the
/// test story, the two before it validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn from_ids(ids: &[String]) -> Result<Self> {
        if ids.len() < 4 {
            return Err(Error::Config(format!("need at least 4 stories for a split, got {}", ids.len())));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let n = order.len();
        let mut train = order[..n - 3].to_vec();
        let mut val = order[n - 3..n - 1].to_vec();
        train.sort();
        val.sort();
        Ok(Self { train, val, test: vec![order[n - 1]] })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Story {
    pub spec: StorySpec,
    pub wave: Waveform,
    pub n_volumes: usize,
}

impl Story {
    pub fn volume_times(&self, tr: f64) -> Vec<f64> {
        volume_times(self.n_volumes, tr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub rois: Rois,
    pub sigma: f64,
    /// One `n_volumes × n_voxels` matrix per story, z-scored per story.
    pub responses: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub stories: Vec<Story>,
    pub subjects: Vec<SubjectData>,
    pub split: Split,
}

impl Dataset {
    pub fn tr(&self) -> f64 {
        self.config.tr
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectData> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("unknown subject '{id}'")))
    }

    /// Base (pre-trained) encoder implied by the config.
    pub fn base_encoder(&self) -> Result<EncoderWeights> {
        EncoderWeights::init(&self.config.encoder)
    }

    /// Teacher shared by all subjects.
    pub fn teacher(&self) -> Result<Teacher> {
        Teacher::build(&self.base_encoder()?, &self.config.teacher)
    }

    /// Teacher that generated the responses of subject `id`.
    pub fn subject_teacher(&self, id: &str) -> Result<Teacher> {
        let index = self
            .subjects
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("unknown subject '{id}'")))?;
        self.teacher()?.for_subject(&self.config.teacher, index)
    }
}

/// Teacher design matrices per story: early-layer and late-layer delay
/// stacks side by side.
pub fn teacher_designs(cfg: &SynthConfig, teacher: &Teacher, stories: &[Story]) -> Result<Vec<Tensor>> {
    stories
        .iter()
        .map(|s| {
            let v = volume_features(
                &teacher.weights,
                None,
                &s.wave,
                &cfg.featurize,
                &s.volume_times(cfg.tr),
                &[teacher.early_layer, teacher.late_layer],
            )?;
            let early = design_matrix(&v[0], cfg.tr, &cfg.featurize.delays)?;
            let late = design_matrix(&v[1], cfg.tr, &cfg.featurize.delays)?;
            Ok(Tensor::hstack(&[&early, &late])?)
        })
        .collect()
}

fn stack(parts: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    Ok(Tensor::vstack(&idx.iter().map(|&i| &parts[i]).collect::<Vec<_>>())?)
}

/// Mean validation correlation reachable from the base encoder's features
/// when responses are noise-free.
fn base_signal_rho(
    cfg: &SynthConfig,
    base: &EncoderWeights,
    stories: &[Story],
    split: &Split,
    signals: &[Vec<Tensor>],
) -> Result<f64> {
    let designs: Vec<Tensor> = stories
        .iter()
        .map(|s| {
            let v = volume_features(base, None, &s.wave, &cfg.featurize, &s.volume_times(cfg.tr), &[base.config.readout_layer])?;
            design_matrix(&v[0], cfg.tr, &cfg.featurize.delays)
        })
        .collect::<Result<_>>()?;
    let x = stack(&designs, &split.train)?;
    let mut total = 0.0;
    let mut count = 0;
    for sig in signals {
        let fit = fit_encoding(&x, &stack(sig, &split.train)?, &cfg.cv)?;
        for &k in &split.val {
            total += score_temporal(&sig[k], &predict(&fit, &designs[k])?)?.mean();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Generates stories, subjects and responses.
pub fn make_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n_vol = cfg.n_volumes();
    let stories: Vec<Story> = (0..cfg.n_stories)
        .map(|k| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64 + 1);
            let spec = StorySpec {
                id: SynthConfig::story_id(k),
                duration_s: cfg.story_duration_s,
                sample_rate: cfg.encoder.sample_rate,
                seed,
                tokens: schedule_tokens(cfg.story_duration_s, &cfg.schedule, seed),
            };
            Ok(Story { wave: gen_waveform(&spec)?, spec, n_volumes: n_vol })
        })
        .collect::<Result<_>>()?;
    let ids: Vec<String> = stories.iter().map(|s| s.spec.id.clone()).collect();
    let split = Split::from_ids(&ids)?;
    let base = EncoderWeights::init(&cfg.encoder)?;
    let teacher = Teacher::build(&base, &cfg.teacher)?;
    let designs: Vec<Vec<Tensor>> = if cfg.teacher.private_magnitude == 0.0 {
        vec![teacher_designs(cfg, &teacher, &stories)?; cfg.n_subjects]
    } else {
        (0..cfg.n_subjects)
            .map(|s| teacher_designs(cfg, &teacher.for_subject(&cfg.teacher, s)?, &stories))
            .collect::<Result<_>>()?
    };
    let k = cfg.encoder.d_model;
    let shared_seed = cfg.seed ^ 0x5_4a_7e_d0;
    let specs: Vec<SubjectSpec> = (0..cfg.n_subjects)
        .map(|s| {
            let sseed = cfg.seed.wrapping_mul(7919).wrapping_add(100 + s as u64);
            let rois = Rois::generate(cfg.n_voxels, cfg.n_ac, sseed)?;
            SubjectSpec::generate(&SynthConfig::subject_id(s), rois, k, &cfg.loading, 0.0, shared_seed, sseed)
        })
        .collect::<Result<_>>()?;
    let sigma = match cfg.noise.sigma {
        Some(s) => s,
        None => {
            let signals: Vec<Vec<Tensor>> =
                specs.iter().zip(&designs).map(|(s, d)| planted_signal(s, d)).collect::<Result<_>>()?;
            let r = base_signal_rho(cfg, &base, &stories, &split, &signals)?;
            let target = cfg.noise.target_pretrained_rho;
            if r <= target {
                log::warn!("base encoder reaches only {r:.3} on noise-free data; using sigma 0");
                0.0
            } else {
                ((r / target).powi(2) - 1.0).sqrt()
            }
        }
    };
    let subjects = specs
        .into_iter()
        .zip(&designs)
        .map(|(mut s, d)| {
            s.sigma = vec![sigma; s.rois.n_voxels()];
            Ok(SubjectData { id: s.id.clone(), responses: gen_responses(&s, d)?, rois: s.rois, sigma })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { config: cfg.clone(), stories, subjects, split })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoryEntry {
    #[serde(flatten)]
    spec: StorySpec,
    n_volumes: usize,
    file: String,
    sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SubjectEntry {
    id: String,
    n_voxels: usize,
    sigma: f64,
    rois_file: String,
    responses: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SplitEntry {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: SynthConfig,
    tr: f64,
    stories: Vec<StoryEntry>,
    subjects: Vec<SubjectEntry>,
    split: SplitEntry,
    checksum: String,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn read_checked(path: &Path, sha: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if sha256_hex(&bytes) != sha {
        return Err(Error::Data(format!("checksum mismatch for {}", path.display())));
    }
    Ok(bytes)
}

fn response_container(subject: &str, story: &str, tr: f64, r: &Tensor) -> Container {
    let mut c = Container::new("responses").with_meta("subject", subject).with_meta("story", story).with_meta("tr", tr);
    c.push("matrix", r.clone());
    c
}

impl Dataset {
    /// Layout: `stories/<id>.wav` (16-bit PCM mono RIFF),
    /// `responses/<subject>/<story>.bin`, `rois/<subject>.json`,
    /// `manifest.json` with per-file SHA-256 and the split.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        let mut stories = Vec::new();
        for s in &self.stories {
            let rel = format!("stories/{}.wav", s.spec.id);
            let path = dir.join(&rel);
            if let Some(p) = path.parent() {
                fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
            }
            s.wave.write_wav(&path)?;
            let sha = sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?);
            stories.push(StoryEntry { spec: s.spec.clone(), n_volumes: s.n_volumes, file: rel, sha256: sha });
        }
        let mut subjects = Vec::new();
        for sub in &self.subjects {
            let rois_file = format!("rois/{}.json", sub.id);
            write_bytes(&dir.join(&rois_file), &serde_json::to_vec_pretty(&sub.rois)?)?;
            let mut responses = BTreeMap::new();
            for (s, r) in self.stories.iter().zip(&sub.responses) {
                let rel = format!("responses/{}/{}.bin", sub.id, s.spec.id);
                let bytes = response_container(&sub.id, &s.spec.id, self.tr(), r).to_bytes();
                responses.insert(rel.clone(), write_bytes(&dir.join(&rel), &bytes)?);
            }
            subjects.push(SubjectEntry {
                id: sub.id.clone(),
                n_voxels: sub.rois.n_voxels(),
                sigma: sub.sigma,
                rois_file,
                responses,
            });
        }
        let names = |idx: &[usize]| idx.iter().map(|&i| self.stories[i].spec.id.clone()).collect();
        let split = SplitEntry { train: names(&self.split.train), val: names(&self.split.val), test: names(&self.split.test) };
        let mut all: Vec<&str> = stories.iter().map(|s| s.sha256.as_str()).collect();
        for sub in &subjects {
            all.extend(sub.responses.values().map(String::as_str));
        }
        let checksum = sha256_hex(all.join("").as_bytes());
        let manifest = Manifest {
            format: "neuroencode-dataset-1".into(),
            config: self.config.clone(),
            tr: self.tr(),
            stories,
            subjects,
            split,
            checksum: checksum.clone(),
        };
        write_bytes(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(checksum)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join("manifest.json");
        let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        let mut stories = Vec::new();
        for e in &m.stories {
            let path = dir.join(&e.file);
            read_checked(&path, &e.sha256)?;
            let wave = Waveform::read_wav(&path)?;
            stories.push(Story { spec: e.spec.clone(), wave, n_volumes: e.n_volumes });
        }
        let index = |id: &String| {
            stories
                .iter()
                .position(|s| &s.spec.id == id)
                .ok_or_else(|| Error::Data(format!("split names unknown story '{id}'")))
        };
        let split = Split {
            train: m.split.train.iter().map(index).collect::<Result<_>>()?,
            val: m.split.val.iter().map(index).collect::<Result<_>>()?,
            test: m.split.test.iter().map(index).collect::<Result<_>>()?,
        };
        let mut subjects = Vec::new();
        for e in &m.subjects {
            let rpath = dir.join(&e.rois_file);
            let rois: Rois = serde_json::from_slice(&fs::read(&rpath).map_err(|er| Error::io(&rpath, er))?)?;
            rois.validate()?;
            let mut responses = Vec::new();
            for s in &stories {
                let rel = format!("responses/{}/{}.bin", e.id, s.spec.id);
                let sha = e.responses.get(&rel).ok_or_else(|| Error::Data(format!("manifest lacks {rel}")))?;
                let c = Container::from_bytes(&read_checked(&dir.join(&rel), sha)?)?;
                c.expect_kind("responses")?;
                let r = c.array("matrix")?.clone();
                if r.rows() != s.n_volumes || r.cols() != rois.n_voxels() {
                    return Err(Error::Data(format!("{rel} has shape {:?}", r.shape())));
                }
                responses.push(r);
            }
            subjects.push(SubjectData { id: e.id.clone(), rois, sigma: e.sigma, responses });
        }
        Ok(Self { config: m.config, stories, subjects, split })
    }
}
