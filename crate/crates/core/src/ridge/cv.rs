use serde::{Deserialize, Serialize};

use super::svd::SvdPath;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::stats::pearson;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub alphas: Vec<f64>,
    pub n_folds: usize,
    pub chunk_length: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { alphas: log_grid(1.0, 1e5, 10), n_folds: 5, chunk_length: 20 }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config("alpha grid must be non-empty, finite and non-negative".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("alpha grid must be strictly increasing".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Config("need at least two folds".into()));
        }
        if self.chunk_length == 0 {
            return Err(Error::Config("chunk_length must be at least 1".into()));
        }
        Ok(())
    }

    /// Fold of every row: contiguous chunks of `chunk_length` rows, dealt
    /// to folds round-robin.
    pub fn fold_of_rows(&self, t: usize) -> Vec<usize> {
        (0..t).map(|i| (i / self.chunk_length) % self.n_folds).collect()
    }
}

/// Per-voxel alpha and the held-out score curve that chose it.
#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub alphas: Vec<f64>,
    /// `n_alphas × n_voxels` mean held-out correlation.
    pub scores: Tensor,
}

/// Scores within this margin count as tied; ties go to the larger alpha.
const TIE: f64 = 1e-12;

pub fn cv_select_alpha(x: &Tensor, y: &Tensor, cfg: &CvConfig) -> Result<CvResult> {
    cfg.validate()?;
    let t = x.rows();
    if y.rows() != t {
        return Err(Error::Shape(format!("{t} design rows vs {} response rows", y.rows())));
    }
    if t < cfg.n_folds * cfg.chunk_length {
        return Err(Error::Data(format!(
            "{t} rows cannot fill {} folds of {}-row chunks",
            cfg.n_folds, cfg.chunk_length
        )));
    }
    let nv = y.cols();
    let na = cfg.alphas.len();
    let folds = cfg.fold_of_rows(t);
    let mut scores = Tensor::zeros(&[na, nv]);
    for fold in 0..cfg.n_folds {
        let train: Vec<usize> = (0..t).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..t).filter(|&i| folds[i] == fold).collect();
        let path = SvdPath::new(&x.select_rows(&train))?;
        let uty = path.project(&y.select_rows(&train));
        let xv = path.rotate(&x.select_rows(&test));
        let y_te = y.select_rows(&test);
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            let mut scaled = uty.clone();
            for (i, f) in path.factors(alpha).into_iter().enumerate() {
                scaled.row_mut(i).scale_mut(f);
            }
            let pred = &xv * scaled;
            for v in 0..nv {
                let p: Vec<f64> = pred.column(v).iter().copied().collect();
                let r = pearson(&y_te.column(v), &p).unwrap_or(0.0);
                let cur = scores.get(ai, v);
                scores.set(ai, v, cur + r / cfg.n_folds as f64);
            }
        }
    }
    let alphas = (0..nv)
        .map(|v| {
            let top = (0..na).map(|ai| scores.get(ai, v)).fold(f64::NEG_INFINITY, f64::max);
            let best = (0..na).rev().find(|&ai| scores.get(ai, v) >= top - TIE).expect("non-empty grid");
            cfg.alphas[best]
        })
        .collect();
    Ok(CvResult { alphas, scores })
}
