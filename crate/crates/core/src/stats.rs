//! Column statistics and correlation helpers shared across modules.

use crate::gradcore::Tensor;

/// Column means and population standard deviations.
pub fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (r, c) = (x.rows(), x.cols());
    let mut mean = vec![0.0; c];
    for i in 0..r {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut var = vec![0.0; c];
    for i in 0..r {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / r as f64).sqrt()).collect();
    (mean, std)
}

/// Z-scores every column. Constant columns become all-zero.
pub fn zscore_columns(x: &Tensor) -> Tensor {
    let (mean, std) = column_moments(x);
    apply_standardization(x, &mean, &std)
}

/// `(x - mean) / std` per column; columns with zero `std` map to zero.
pub fn apply_standardization(x: &Tensor, mean: &[f64], std: &[f64]) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        for j in 0..c {
            row[j] = if std[j] > 0.0 { (row[j] - mean[j]) / std[j] } else { 0.0 };
        }
    }
    out
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa.sqrt() * sbb.sqrt()))
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    crate::encoder::hex_digest(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_handles_constant_columns() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        let z = zscore_columns(&x);
        assert_eq!(z.data(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn pearson_hand_value() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r - 0.866).abs() < 1e-3);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
