use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Thin SVD `X = U·diag(s)·Vᵀ`, keeping only numerically nonzero singular
/// values.
pub struct SvdPath {
    /// `T × r`
    u: DMatrix<f64>,
    s: Vec<f64>,
    /// `P × r`
    v: DMatrix<f64>,
}

pub(crate) fn to_na(x: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}

impl SvdPath {
    pub fn new(x: &Tensor) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Data("design matrix has non-finite entries".into()));
        }
        let svd = to_na(x).svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = smax * 1e-12 * x.rows().max(x.cols()) as f64;
        let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol).collect();
        let u = u.select_columns(&keep);
        let v = vt.select_rows(&keep).transpose();
        let s = keep.iter().map(|&i| svd.singular_values[i]).collect();
        Ok(Self { u, s, v })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `Uᵀ·Y`, `r × V`.
    pub fn project(&self, y: &Tensor) -> DMatrix<f64> {
        self.u.transpose() * to_na(y)
    }

    /// `X_new·V`, `n × r`.
    pub fn rotate(&self, x: &Tensor) -> DMatrix<f64> {
        to_na(x) * &self.v
    }

    /// Ridge shrinkage factors `s / (s² + α)`.
    pub fn factors(&self, alpha: f64) -> Vec<f64> {
        self.s.iter().map(|s| s / (s * s + alpha)).collect()
    }

    /// `β = V·diag(s/(s²+α_v))·Uᵀ·Y` with a separate α per target column.
    pub fn solve(&self, uty: &DMatrix<f64>, alphas: &[f64]) -> DMatrix<f64> {
        let mut scaled = uty.clone();
        for (j, &a) in alphas.iter().enumerate() {
            for (i, f) in self.factors(a).into_iter().enumerate() {
                scaled[(i, j)] *= f;
            }
        }
        &self.v * scaled
    }
}
