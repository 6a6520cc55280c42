//! Negative mean spatial correlation:
//! `L = −(1/T) Σ_t corr_v(R_t, R̂_t)`, correlation taken across voxels
//! within each volume. Volumes where either side has zero variance across
//! voxels contribute 0 and are counted.

use crate::error::{Error, Result};
use crate::gradcore::{CustomOp, GradError, Tensor};

fn centered(row: &[f64]) -> (Vec<f64>, f64) {
    let m = row.iter().sum::<f64>() / row.len() as f64;
    let c: Vec<f64> = row.iter().map(|x| x - m).collect();
    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, n)
}

/// Loss value and number of zero-variance volumes.
pub fn spatial_corr_loss(r: &Tensor, r_hat: &Tensor) -> Result<(f64, usize)> {
    check(r, r_hat).map_err(Error::from)?;
    let (t, _) = (r.rows(), r.cols());
    let mut total = 0.0;
    let mut degenerate = 0;
    for i in 0..t {
        let (a, na) = centered(r_hat.row(i));
        let (b, nb) = centered(r.row(i));
        if na == 0.0 || nb == 0.0 {
            degenerate += 1;
            continue;
        }
        total += a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    }
    Ok((-total / t as f64, degenerate))
}

fn check(r: &Tensor, r_hat: &Tensor) -> std::result::Result<(), GradError> {
    if r.shape() != r_hat.shape() || !r.is_matrix() {
        return Err(GradError::Shape(format!("targets {:?} vs predictions {:?}", r.shape(), r_hat.shape())));
    }
    if r.cols() < 2 {
        return Err(GradError::Shape("spatial correlation needs at least two voxels".into()));
    }
    Ok(())
}

/// Graph op with inputs `[R̂, R]`; `R` receives a zero gradient.
#[derive(Default)]
pub struct SpatialCorrLoss {
    pub degenerate: usize,
}

impl CustomOp for SpatialCorrLoss {
    fn name(&self) -> &'static str {
        "spatial_corr_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> std::result::Result<Tensor, GradError> {
        let [r_hat, r] = inputs else {
            return Err(GradError::Shape("spatial_corr_loss takes [prediction, target]".into()));
        };
        check(r, r_hat)?;
        let (loss, degenerate) = spatial_corr_loss(r, r_hat).map_err(|e| GradError::Shape(e.to_string()))?;
        self.degenerate = degenerate;
        Ok(Tensor::scalar(loss))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let (r_hat, r) = (inputs[0], inputs[1]);
        let (t, v) = (r.rows(), r.cols());
        let go = grad_out.data()[0];
        let mut g = Tensor::zeros(&[t, v]);
        for i in 0..t {
            let (a, na) = centered(r_hat.row(i));
            let (b, nb) = centered(r.row(i));
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            let row = &mut g.data_mut()[i * v..(i + 1) * v];
            for j in 0..v {
                row[j] = -go / t as f64 * (b[j] / nb - corr * a[j] / na) / na;
            }
        }
        vec![g, Tensor::zeros(&[t, v])]
    }
}
