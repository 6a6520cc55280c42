use std::fmt;

use serde::{Deserialize, Serialize};

use super::words::nearest_row;
use super::{align_features_to_words, compute_filterbank, fit_probe, Anchor, EmbeddingTable, FilterbankConfig, WordAlignment};
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::featurize::{extract_layers, slide_windows};
use crate::gradcore::Tensor;
use crate::ridge::CvConfig;
use crate::synthdata::Dataset;

pub const PRETRAINED_ID: &str = "pretrained";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Acoustic: log mel energies of the window's final stretch.
    Filterbank,
    /// Semantic: embedding of the word ending nearest the window end.
    Embedding,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 2] = [ProbeKind::Filterbank, ProbeKind::Embedding];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Filterbank => "filterbank",
            ProbeKind::Embedding => "embedding",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSweepConfig {
    /// `None` probes layers `0..=readout_layer`.
    pub layers: Option<Vec<usize>>,
    pub kinds: Vec<ProbeKind>,
    pub filterbank: FilterbankConfig,
    pub anchor: Anchor,
    pub embedding_seed: u64,
    pub cv: CvConfig,
}

impl Default for ProbeSweepConfig {
    fn default() -> Self {
        Self {
            layers: None,
            kinds: ProbeKind::ALL.to_vec(),
            filterbank: FilterbankConfig::default(),
            anchor: Anchor::Offset,
            embedding_seed: 300,
            // windows overlap heavily, so folds are 10 s chunks
            cv: CvConfig { chunk_length: 100, ..CvConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub model_id: String,
    pub layer: usize,
    pub probe_kind: ProbeKind,
    pub r2: f64,
    pub r2_minus_pretrained: f64,
}

/// Model-independent probe targets for one story.
struct StoryTargets {
    filterbank: Tensor,
    word_rows: Vec<usize>,
    embeddings: Tensor,
}

fn story_targets(ds: &Dataset, index: usize, cfg: &ProbeSweepConfig, table: &EmbeddingTable) -> Result<StoryTargets> {
    let story = &ds.stories[index];
    let plan = slide_windows(&story.wave, ds.config.featurize.window_s, ds.config.featurize.stride_s)?;
    let times = plan.times();
    let fb = compute_filterbank(&story.wave, &cfg.filterbank)?;
    let rows: Vec<usize> = times.iter().map(|&t| nearest_row(&fb.times, t)).collect();
    let align = WordAlignment::from_tokens(&story.spec.tokens)?.within(times[0], times[times.len() - 1], cfg.anchor);
    let pairs = align_features_to_words(&times, &align, cfg.anchor)?;
    let words: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok(StoryTargets {
        filterbank: fb.matrix.select_rows(&rows),
        word_rows: pairs.iter().map(|p| p.0).collect(),
        embeddings: table.rows(&words)?,
    })
}

/// Probe R² per (model, layer, kind). The pre-trained encoder always comes
/// first under [`PRETRAINED_ID`]; `r2_minus_pretrained` is the difference
/// from its cell. Probes train on the training stories and are scored on
/// the validation and test stories.
pub fn probe_sweep(
    ds: &Dataset,
    pretrained: &EncoderWeights,
    models: &[(String, EncoderWeights)],
    cfg: &ProbeSweepConfig,
) -> Result<Vec<ProbeCell>> {
    let readout = pretrained.config.readout_layer;
    let layers = cfg.layers.clone().unwrap_or_else(|| (0..=readout).collect());
    if layers.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::Config("probe sweep needs at least one layer and one probe kind".into()));
    }
    if models.iter().any(|(id, _)| id == PRETRAINED_ID) {
        return Err(Error::Config(format!("model id '{PRETRAINED_ID}' is reserved")));
    }
    let vocab = ds.config.schedule.vocab;
    let table = EmbeddingTable::seeded(vocab, cfg.embedding_seed)?;
    let train = ds.split.train.clone();
    let held: Vec<usize> = ds.split.val.iter().chain(&ds.split.test).copied().collect();
    let targets: Vec<Option<StoryTargets>> = (0..ds.stories.len())
        .map(|i| if train.contains(&i) || held.contains(&i) { story_targets(ds, i, cfg, &table).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let tgt = |i: usize| targets[i].as_ref().expect("prepared");

    let mut cells = Vec::new();
    let mut baseline: Vec<f64> = Vec::new();
    let all_models = std::iter::once((PRETRAINED_ID, pretrained)).chain(models.iter().map(|(id, w)| (id.as_str(), w)));
    for (mi, (id, weights)) in all_models.enumerate() {
        // per story, per requested layer
        let feats: Vec<Option<Vec<Tensor>>> = (0..ds.stories.len())
            .map(|i| {
                if targets[i].is_none() {
                    return Ok(None);
                }
                let s = &ds.stories[i];
                let plan = slide_windows(&s.wave, ds.config.featurize.window_s, ds.config.featurize.stride_s)?;
                Ok(Some(extract_layers(weights, None, &s.wave, &plan, &layers)?.into_iter().map(|f| f.matrix).collect()))
            })
            .collect::<Result<_>>()?;
        let mut k = 0;
        for (li, &layer) in layers.iter().enumerate() {
            for &kind in &cfg.kinds {
                let build = |idx: &[usize]| -> Result<(Tensor, Tensor)> {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for &i in idx {
                        let x = &feats[i].as_ref().expect("extracted")[li];
                        let t = tgt(i);
                        match kind {
                            ProbeKind::Filterbank => {
                                xs.push(x.clone());
                                ys.push(t.filterbank.clone());
                            }
                            ProbeKind::Embedding => {
                                xs.push(x.select_rows(&t.word_rows));
                                ys.push(t.embeddings.clone());
                            }
                        }
                    }
                    Ok((Tensor::vstack(&xs.iter().collect::<Vec<_>>())?, Tensor::vstack(&ys.iter().collect::<Vec<_>>())?))
                };
                let (xtr, ytr) = build(&train)?;
                let (xte, yte) = build(&held)?;
                let r2 = fit_probe(&xtr, &ytr, &xte, &yte, &cfg.cv)?.scores.r2;
                if mi == 0 {
                    baseline.push(r2);
                }
                cells.push(ProbeCell {
                    model_id: id.to_string(),
                    layer,
                    probe_kind: kind,
                    r2,
                    r2_minus_pretrained: r2 - baseline[k],
                });
                k += 1;
            }
        }
    }
    Ok(cells)
}

/// CSV with header `model_id,layer,probe_kind,r2,r2_minus_pretrained`.
pub fn probe_csv(cells: &[ProbeCell]) -> String {
    let mut s = String::from("model_id,layer,probe_kind,r2,r2_minus_pretrained\n");
    for c in cells {
        s.push_str(&format!("{},{},{},{:.6},{:.6}\n", c.model_id, c.layer, c.probe_kind, c.r2, c.r2_minus_pretrained));
    }
    s
}
