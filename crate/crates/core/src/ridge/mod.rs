//! Multi-target ridge regression on a shared SVD, chunked cross-validation
//! of per-voxel penalties, and temporal-correlation scoring.

mod cv;
mod svd;

pub use cv::{cv_select_alpha, log_grid, CvConfig, CvResult};
pub use svd::SvdPath;

use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::stats::{apply_standardization, column_moments, pearson};

/// Raw ridge solution for an unstandardized, intercept-free system.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub beta: Tensor,
    /// All-zero design columns; their coefficients are fixed at zero.
    pub dropped: Vec<usize>,
}

/// Solves `min ‖Xβ_v − Y_v‖² + α_v‖β_v‖²` for every column `v` from one SVD
/// of `X`. A single alpha is broadcast to all targets.
pub fn fit_ridge(x: &Tensor, y: &Tensor, alphas: &[f64]) -> Result<RidgeSolution> {
    let (t, p) = (x.rows(), x.cols());
    if t < 2 {
        return Err(Error::Data("ridge needs at least two rows".into()));
    }
    if y.rows() != t {
        return Err(Error::Shape(format!("{t} design rows vs {} response rows", y.rows())));
    }
    let nv = y.cols();
    let alphas: Vec<f64> = match alphas.len() {
        1 => vec![alphas[0]; nv],
        n if n == nv => alphas.to_vec(),
        n => return Err(Error::Shape(format!("{n} alphas for {nv} targets"))),
    };
    if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::Config("alphas must be finite and non-negative".into()));
    }
    let dropped: Vec<usize> = (0..p).filter(|&j| (0..t).all(|i| x.get(i, j) == 0.0)).collect();
    let kept: Vec<usize> = (0..p).filter(|j| !dropped.contains(j)).collect();
    for j in &dropped {
        log::warn!("design column {j} is all zero; dropped with coefficient 0");
    }
    let mut beta = Tensor::zeros(&[p, nv]);
    if !kept.is_empty() {
        let path = SvdPath::new(&x.select_cols(&kept))?;
        let b = path.solve(&path.project(y), &alphas);
        for (bi, &j) in kept.iter().enumerate() {
            for v in 0..nv {
                beta.set(j, v, b[(bi, v)]);
            }
        }
    }
    if !beta.is_finite() {
        return Err(Error::Diverged("ridge coefficients are not finite".into()));
    }
    Ok(RidgeSolution { beta, dropped })
}

/// Fitted encoding model: standardized design → standardized response.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub beta: Tensor,
    pub alpha_per_voxel: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub cv: CvConfig,
    pub dropped: Vec<usize>,
}

/// Standardizes `x` and `y` by their column moments, picks per-voxel
/// alphas by chunked CV, then refits on all rows.
pub fn fit_encoding(x: &Tensor, y: &Tensor, cv: &CvConfig) -> Result<RidgeFit> {
    let (x_mean, x_scale) = column_moments(x);
    let (y_mean, y_scale) = column_moments(y);
    let xs = apply_standardization(x, &x_mean, &x_scale);
    let ys = apply_standardization(y, &y_mean, &y_scale);
    let chosen = cv_select_alpha(&xs, &ys, cv)?;
    let sol = fit_ridge(&xs, &ys, &chosen.alphas)?;
    Ok(RidgeFit {
        beta: sol.beta,
        alpha_per_voxel: chosen.alphas,
        x_mean,
        x_scale,
        y_mean,
        y_scale,
        cv: cv.clone(),
        dropped: sol.dropped,
    })
}

impl RidgeFit {
    /// Fit with fixed per-voxel alphas and no standardization.
    pub fn raw(beta: Tensor, alpha_per_voxel: Vec<f64>) -> Self {
        let (p, v) = (beta.rows(), beta.cols());
        Self {
            beta,
            alpha_per_voxel,
            x_mean: vec![0.0; p],
            x_scale: vec![1.0; p],
            y_mean: vec![0.0; v],
            y_scale: vec![1.0; v],
            cv: CvConfig::default(),
            dropped: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.beta.rows()
    }

    pub fn n_voxels(&self) -> usize {
        self.beta.cols()
    }

    /// Keeps only the given voxels.
    pub fn select_voxels(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            beta: self.beta.select_cols(idx),
            alpha_per_voxel: pick(&self.alpha_per_voxel),
            y_mean: pick(&self.y_mean),
            y_scale: pick(&self.y_scale),
            ..self.clone()
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("ridge_fit")
            .with_meta("alpha_grid", &self.cv.alphas)
            .with_meta("n_folds", self.cv.n_folds)
            .with_meta("chunk_length", self.cv.chunk_length)
            .with_meta("fold_rule", "row i -> fold (i / chunk_length) % n_folds")
            .with_meta("dropped_columns", &self.dropped);
        c.push("beta", self.beta.clone());
        c.push("alpha_per_voxel", Tensor::vector(self.alpha_per_voxel.clone()));
        c.push("x_mean", Tensor::vector(self.x_mean.clone()));
        c.push("x_scale", Tensor::vector(self.x_scale.clone()));
        c.push("y_mean", Tensor::vector(self.y_mean.clone()));
        c.push("y_scale", Tensor::vector(self.y_scale.clone()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("ridge_fit")?;
        let vec = |name: &str| -> Result<Vec<f64>> { Ok(c.array(name)?.data().to_vec()) };
        let fit = Self {
            beta: c.array("beta")?.clone(),
            alpha_per_voxel: vec("alpha_per_voxel")?,
            x_mean: vec("x_mean")?,
            x_scale: vec("x_scale")?,
            y_mean: vec("y_mean")?,
            y_scale: vec("y_scale")?,
            cv: CvConfig {
                alphas: c.meta_as("alpha_grid")?,
                n_folds: c.meta_as("n_folds")?,
                chunk_length: c.meta_as("chunk_length")?,
            },
            dropped: c.meta_as("dropped_columns")?,
        };
        let (p, v) = (fit.beta.rows(), fit.beta.cols());
        if fit.x_mean.len() != p || fit.x_scale.len() != p || fit.y_mean.len() != v || fit.y_scale.len() != v {
            return Err(Error::Format("ridge fit arrays disagree in size".into()));
        }
        Ok(fit)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Standardizes `x` with the fit's statistics, applies `β`, and maps back
/// to response units.
pub fn predict(fit: &RidgeFit, x: &Tensor) -> Result<Tensor> {
    if x.cols() != fit.n_features() {
        return Err(Error::Shape(format!("design has {} columns, fit expects {}", x.cols(), fit.n_features())));
    }
    let xs = apply_standardization(x, &fit.x_mean, &fit.x_scale);
    let mut out = xs.matmul(&fit.beta)?;
    let nv = fit.n_voxels();
    for row in out.data_mut().chunks_mut(nv) {
        for (v, r) in row.iter_mut().enumerate() {
            *r = *r * fit.y_scale[v] + fit.y_mean[v];
        }
    }
    Ok(out)
}

/// Per-voxel temporal correlation. Columns with zero variance on either side
/// score 0 and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelScores {
    pub rho: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl VoxelScores {
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.rho)
    }

    pub fn mean_over(&self, idx: &[usize]) -> f64 {
        crate::stats::mean(&idx.iter().map(|&i| self.rho[i]).collect::<Vec<_>>())
    }
}

pub fn score_temporal(r: &Tensor, r_hat: &Tensor) -> Result<VoxelScores> {
    if r.shape() != r_hat.shape() || !r.is_matrix() {
        return Err(Error::Shape(format!("responses {:?} vs predictions {:?}", r.shape(), r_hat.shape())));
    }
    if r.rows() < 3 {
        return Err(Error::Data("need at least three time points to score".into()));
    }
    let mut rho = Vec::with_capacity(r.cols());
    let mut degenerate = Vec::with_capacity(r.cols());
    for v in 0..r.cols() {
        match pearson(&r.column(v), &r_hat.column(v)) {
            Some(c) => {
                rho.push(c);
                degenerate.push(false);
            }
            None => {
                rho.push(0.0);
                degenerate.push(true);
            }
        }
    }
    Ok(VoxelScores { rho, degenerate })
}
