//! Lanczos (windowed-sinc) resampling onto an arbitrary target grid.
//!
//! For a target time `t` and source time `s`, the weight is
//! `sinc(x) · sinc(x/a)` with `x = 2·fc·(t−s)` when `|x| < a`, else zero,
//! where `sinc(x) = sin(πx)/(πx)`, `fc` is the low-pass band edge in Hz and
//! `a` the lobe count. Each target row is renormalized to sum to one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanczosConfig {
    pub lobes: usize,
    /// Band edge in Hz; `None` uses the target sampling rate.
    pub cutoff_hz: Option<f64>,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self { lobes: 3, cutoff_hz: None }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

pub fn lanczos_kernel(x: f64, lobes: usize) -> f64 {
    let a = lobes as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

fn target_rate(target_times: &[f64]) -> Result<f64> {
    if target_times.len() < 2 {
        return Err(Error::Config("need two target times to infer the target rate; set cutoff_hz".into()));
    }
    let span = target_times[target_times.len() - 1] - target_times[0];
    if span <= 0.0 {
        return Err(Error::Data("target times must increase".into()));
    }
    Ok((target_times.len() - 1) as f64 / span)
}

/// Dense `targets × sources` interpolation matrix with unit row sums.
pub fn lanczos_weights(source_times: &[f64], target_times: &[f64], cfg: &LanczosConfig) -> Result<Tensor> {
    if source_times.is_empty() || target_times.is_empty() {
        return Err(Error::Data("empty time grid".into()));
    }
    if cfg.lobes == 0 {
        return Err(Error::Config("Lanczos filter needs at least one lobe".into()));
    }
    let cutoff = match cfg.cutoff_hz {
        Some(c) if c > 0.0 => c,
        Some(c) => return Err(Error::Config(format!("cutoff {c} Hz must be positive"))),
        None => target_rate(target_times)?,
    };
    let (first, last) = (source_times[0], source_times[source_times.len() - 1]);
    const TOL: f64 = 1e-9;
    let ns = source_times.len();
    let mut w = Tensor::zeros(&[target_times.len(), ns]);
    for (i, &t) in target_times.iter().enumerate() {
        if t < first - TOL || t > last + TOL {
            return Err(Error::Data(format!("target time {t:.4}s outside source support [{first:.4}, {last:.4}]")));
        }
        let mut total = 0.0;
        let row = &mut w.data_mut()[i * ns..(i + 1) * ns];
        for (slot, &s) in row.iter_mut().zip(source_times) {
            let k = lanczos_kernel(2.0 * cutoff * (t - s), cfg.lobes);
            *slot = k;
            total += k;
        }
        if total.abs() < 1e-12 {
            return Err(Error::Data(format!("no source support near target time {t:.4}s")));
        }
        for slot in row.iter_mut() {
            *slot /= total;
        }
    }
    Ok(w)
}

/// Interpolates each column of `matrix` (sampled at `source_times`) onto
/// `target_times`.
pub fn lanczos_resample(
    source_times: &[f64],
    matrix: &Tensor,
    target_times: &[f64],
    cfg: &LanczosConfig,
) -> Result<Tensor> {
    if matrix.rows() != source_times.len() {
        return Err(Error::Shape(format!(
            "{} source rows but {} source times",
            matrix.rows(),
            source_times.len()
        )));
    }
    Ok(lanczos_weights(source_times, target_times, cfg)?.matmul(matrix)?)
}

/// Column range `[lo, hi)` of sources with nonzero weight for each target.
pub fn support_ranges(weights: &Tensor) -> Vec<(usize, usize)> {
    (0..weights.rows())
        .map(|i| {
            let row = weights.row(i);
            let lo = row.iter().position(|&x| x != 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&x| x != 0.0).map_or(lo, |p| p + 1);
            (lo, hi)
        })
        .collect()
}
