use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Adam moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.shape());
        Self {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
