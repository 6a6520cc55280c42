//! The experiment as a sequence of commands over one output directory.
//!
//! ```text
//! <out>/dataset/                      gen (or `dataset` from the config)
//! <out>/features/<story>.bin          features: pre-trained readout per volume
//! <out>/baseline/<subject>.json       fit: per-voxel baseline ρ and scope means
//! <out>/baseline/<subject>.ridge.bin
//! <out>/runs/<subject>/<roi>/         finetune: epochs.jsonl, adapters/, best.json, best.bin
//! <out>/eval/eval.csv                 eval: every run scored on every ROI scope
//! <out>/transfer/<roi>/matrix.csv     transfer: train subject × test subject
//! <out>/probes/probes.csv             probe: layer sweep of all models
//! <out>/report/                       report: consolidated tables
//! <out>/manifests/<command>.json      resolved config, seeds and input checksums
//! ```
//!
//! Each command stages its outputs next to the destination and moves them
//! into place only on success.

mod commands;
mod report;
mod stage;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::TrainConfig;
use crate::probes::ProbeSweepConfig;
use crate::ridge::CvConfig;
use crate::synthdata::{RoiScope, SynthConfig};

pub use commands::{
    transfer_report, cmd_eval, cmd_features, cmd_finetune, cmd_fit, cmd_gen, cmd_probe, cmd_transfer, BaselineRecord, ScopeScores,
    TransferCell, TransferReport, EVAL_SCOPES, TRANSFER_SCOPES,
};
pub use report::cmd_report;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset directory; `None` means `<out>/dataset`.
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Overrides the dataset, training and adapter seeds when set.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub probe: ProbeSweepConfig,
    /// ROI the fine-tuning loss sees; also selects runs for transfer.
    pub roi: RoiScope,
    /// Subjects to fine-tune on; empty means all.
    pub train_subjects: Vec<String>,
    /// Subjects to evaluate transfer on; empty means all.
    pub test_subjects: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: PathBuf::from("neuroencode-out"),
            seed: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeSweepConfig::default(),
            roi: RoiScope::All,
            train_subjects: Vec::new(),
            test_subjects: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Minutes-scale configuration on [`SynthConfig::small`].
    pub fn small(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            synth: SynthConfig::small(),
            train: TrainConfig { learning_rate: 5e-3, epochs: 2, batch_trs: 10, ..TrainConfig::default() },
            probe: ProbeSweepConfig {
                cv: CvConfig { n_folds: 3, chunk_length: 50, ..CvConfig::default() },
                ..ProbeSweepConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Applies command-line overrides; `--subject` narrows the training
    /// subjects.
    pub fn with_overrides(
        mut self,
        roi: Option<RoiScope>,
        subject: Option<String>,
        out: Option<PathBuf>,
        seed: Option<u64>,
    ) -> Self {
        if let Some(r) = roi {
            self.roi = r;
        }
        if let Some(s) = subject {
            self.train_subjects = vec![s];
        }
        if let Some(o) = out {
            self.out = o;
        }
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }

    /// Config with the run seed pushed into every seeded component and the
    /// ROI into the training config.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = c.seed {
            c.synth.seed = s;
            c.train.seed = s;
            c.train.lora.seed = s;
        }
        c.train.roi = c.roi;
        c
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gen,
    Features,
    Fit,
    Finetune,
    Eval,
    Transfer,
    Probe,
    Report,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Gen,
        Command::Features,
        Command::Fit,
        Command::Finetune,
        Command::Eval,
        Command::Transfer,
        Command::Probe,
        Command::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Features => "features",
            Command::Fit => "fit",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::Transfer => "transfer",
            Command::Probe => "probe",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown command '{s}'")))
    }
}

/// Runs one command and returns its JSON summary.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<serde_json::Value> {
    let cfg = cfg.resolved();
    log::info!("{cmd} -> {}", cfg.out.display());
    match cmd {
        Command::Gen => cmd_gen(&cfg),
        Command::Features => cmd_features(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Finetune => cmd_finetune(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Transfer => cmd_transfer(&cfg),
        Command::Probe => cmd_probe(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

/// gen → features → fit → finetune → eval → transfer → probe → report.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<serde_json::Value>> {
    Command::ALL.iter().map(|&c| run_command(c, cfg)).collect()
}

/// `100·(ρ_model − ρ_pre)/ρ_pre`, both already averaged over voxels.
pub fn pct_improvement(rho_model: f64, rho_pre: f64) -> f64 {
    100.0 * (rho_model - rho_pre) / rho_pre
}

/// Worker count from `NEUROENCODE_THREADS`, else the available cores.
pub fn thread_count() -> usize {
    std::env::var("NEUROENCODE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub(crate) fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}
