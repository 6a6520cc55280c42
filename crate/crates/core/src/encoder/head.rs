use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Rank-`k` linear map from features to voxels: `X · down · up`.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckHead {
    /// `P × k`
    pub down: Tensor,
    /// `k × |V|`
    pub up: Tensor,
}

impl BottleneckHead {
    pub fn new(down: Tensor, up: Tensor) -> Result<Self> {
        if !down.is_matrix() || !up.is_matrix() || down.cols() != up.rows() {
            return Err(Error::Shape(format!("head factors {:?} and {:?}", down.shape(), up.shape())));
        }
        let k = down.cols();
        if k > down.rows().min(up.cols()) {
            return Err(Error::Shape(format!(
                "bottleneck rank {k} exceeds min(P={}, |V|={})",
                down.rows(),
                up.cols()
            )));
        }
        Ok(Self { down, up })
    }

    pub fn rank(&self) -> usize {
        self.down.cols()
    }

    pub fn n_features(&self) -> usize {
        self.down.rows()
    }

    pub fn n_voxels(&self) -> usize {
        self.up.cols()
    }

    /// Best rank-`k` factorization of a full `P × |V|` map (truncated SVD,
    /// singular values split evenly between the factors). `k` is clipped
    /// to `min(P, |V|)`.
    pub fn from_full(beta: &Tensor, k: usize) -> Result<Self> {
        let (p, v) = (beta.rows(), beta.cols());
        let k = k.min(p).min(v).max(1);
        let m = DMatrix::from_row_slice(p, v, beta.data());
        let svd = m.svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut down = Tensor::zeros(&[p, k]);
        let mut up = Tensor::zeros(&[k, v]);
        for (c, &src) in order.iter().take(k).enumerate() {
            let s = svd.singular_values[src].sqrt();
            for i in 0..p {
                down.set(i, c, u[(i, src)] * s);
            }
            for j in 0..v {
                up.set(c, j, vt[(src, j)] * s);
            }
        }
        Self::new(down, up)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.down, &self.up]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.down, &mut self.up]
    }

    pub fn parameter_count(&self) -> usize {
        self.down.numel() + self.up.numel()
    }
}

/// `features · down · up`.
pub fn head_predict(head: &BottleneckHead, features: &Tensor) -> Result<Tensor> {
    if !features.is_matrix() || features.cols() != head.n_features() {
        return Err(Error::Shape(format!(
            "features {:?} do not match head input width {}",
            features.shape(),
            head.n_features()
        )));
    }
    Ok(features.matmul(&head.down)?.matmul(&head.up)?)
}
