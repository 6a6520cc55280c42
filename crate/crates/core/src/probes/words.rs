use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::TokenEvent;

/// Which instant of a word is matched to a feature timestamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Onset,
    Midpoint,
    #[default]
    Offset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word: usize,
    pub onset: f64,
    pub offset: f64,
}

impl AlignedWord {
    pub fn at(&self, anchor: Anchor) -> f64 {
        match anchor {
            Anchor::Onset => self.onset,
            Anchor::Midpoint => 0.5 * (self.onset + self.offset),
            Anchor::Offset => self.offset,
        }
    }
}

/// Time-aligned transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub words: Vec<AlignedWord>,
}

impl WordAlignment {
    pub fn new(words: Vec<AlignedWord>) -> Result<Self> {
        for w in &words {
            if !(w.offset > w.onset) {
                return Err(Error::Data(format!("word {} ends at {} before it starts at {}", w.word, w.offset, w.onset)));
            }
        }
        for p in words.windows(2) {
            if p[1].onset <= p[0].onset || p[1].onset < p[0].offset {
                return Err(Error::Data(format!("words overlap or are unordered near {:.3}s", p[1].onset)));
            }
        }
        Ok(Self { words })
    }

    pub fn from_tokens(tokens: &[TokenEvent]) -> Result<Self> {
        Self::new(tokens.iter().map(|t| AlignedWord { word: t.word, onset: t.onset, offset: t.offset() }).collect())
    }

    /// Words whose anchor falls inside `[lo, hi]`.
    pub fn within(&self, lo: f64, hi: f64, anchor: Anchor) -> Self {
        Self { words: self.words.iter().filter(|w| (lo..=hi).contains(&w.at(anchor))).copied().collect() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// `(feature row, word id)` for each word: the row whose timestamp is
/// nearest the word's anchor (ties go to the earlier row).
pub fn align_features_to_words(times: &[f64], alignment: &WordAlignment, anchor: Anchor) -> Result<Vec<(usize, usize)>> {
    if times.is_empty() {
        return Err(Error::Data("no feature timestamps".into()));
    }
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Data("feature timestamps must increase".into()));
    }
    const TOL: f64 = 1e-9;
    let (first, last) = (times[0], times[times.len() - 1]);
    alignment
        .words
        .iter()
        .map(|w| {
            let t = w.at(anchor);
            if t < first - TOL || t > last + TOL {
                return Err(Error::Data(format!("word at {t:.3}s outside feature support [{first:.3}, {last:.3}]")));
            }
            Ok((nearest_row(times, t), w.word))
        })
        .collect()
}

/// Index of the increasing `times` entry nearest `t`; ties go to the earlier.
pub(crate) fn nearest_row(times: &[f64], t: f64) -> usize {
    let hi = times.partition_point(|&x| x < t).min(times.len() - 1);
    if hi > 0 && (t - times[hi - 1]) <= (times[hi] - t) {
        hi - 1
    } else {
        hi
    }
}
