use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::ridge::{fit_encoding, predict, CvConfig, RidgeFit};

/// Per-column `1 − SSE/SST`, SST taken around each column's own mean.
/// Constant columns score 0.
pub fn r2_score(y: &Tensor, y_hat: &Tensor) -> Result<Vec<f64>> {
    if y.shape() != y_hat.shape() || !y.is_matrix() || y.rows() < 2 {
        return Err(Error::Shape(format!("R² needs matching matrices, got {:?} and {:?}", y.shape(), y_hat.shape())));
    }
    let (t, k) = (y.rows(), y.cols());
    let mut mean = vec![0.0; k];
    for i in 0..t {
        for (m, v) in mean.iter_mut().zip(y.row(i)) {
            *m += v / t as f64;
        }
    }
    let (mut sse, mut sst) = (vec![0.0; k], vec![0.0; k]);
    for i in 0..t {
        for j in 0..k {
            let (a, b) = (y.get(i, j), y_hat.get(i, j));
            sse[j] += (a - b) * (a - b);
            sst[j] += (a - mean[j]) * (a - mean[j]);
        }
    }
    Ok(sse.iter().zip(&sst).map(|(e, s)| if *s > 0.0 { 1.0 - e / s } else { 0.0 }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScores {
    /// Mean held-out R² over target dimensions.
    pub r2: f64,
    pub r2_train: f64,
    pub r2_per_dim: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ProbeFit {
    pub fit: RidgeFit,
    pub scores: ProbeScores,
}

/// Ridge probe fit on training rows, scored on held-out rows.
pub fn fit_probe(x_train: &Tensor, y_train: &Tensor, x_test: &Tensor, y_test: &Tensor, cv: &CvConfig) -> Result<ProbeFit> {
    let fit = fit_encoding(x_train, y_train, cv)?;
    let per_dim = r2_score(y_test, &predict(&fit, x_test)?)?;
    let train = r2_score(y_train, &predict(&fit, x_train)?)?;
    let scores =
        ProbeScores { r2: crate::stats::mean(&per_dim), r2_train: crate::stats::mean(&train), r2_per_dim: per_dim };
    Ok(ProbeFit { fit, scores })
}
