use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Rois;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::stats::zscore_columns;

/// How voxel weights over teacher features are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadingSpec {
    /// Rank of the feature subspaces voxels load on.
    pub dims: usize,
    /// Variance share of the subspace common to all subjects.
    pub shared_fraction: f64,
    /// Weight of each delay block (hemodynamic profile).
    pub delay_profile: Vec<f64>,
}

impl Default for LoadingSpec {
    fn default() -> Self {
        Self { dims: 4, shared_fraction: 0.5, delay_profile: vec![0.4, 1.0, 0.7, 0.3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectSpec {
    pub id: String,
    pub rois: Rois,
    /// `(2·K·n_delays) × n_voxels`; rows are the early-layer delay blocks
    /// followed by the late-layer delay blocks.
    pub w_true: Tensor,
    pub sigma: Vec<f64>,
    pub seed: u64,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect())
}

impl SubjectSpec {
    /// Draws `W_true`. Auditory-cortex voxels load only on early-layer
    /// teacher features, all others only on late-layer ones. Each voxel's
    /// feature loading mixes a subspace shared by every subject
    /// (`shared_seed`) with one private to this subject (`seed`).
    pub fn generate(
        id: &str,
        rois: Rois,
        k: usize,
        loading: &LoadingSpec,
        sigma: f64,
        shared_seed: u64,
        seed: u64,
    ) -> Result<Self> {
        rois.validate()?;
        if sigma < 0.0 || !(0.0..=1.0).contains(&loading.shared_fraction) || loading.dims == 0 {
            return Err(Error::Config("invalid noise or loading parameters".into()));
        }
        let nd = loading.delay_profile.len();
        let nv = rois.n_voxels();
        let mut shared_rng = ChaCha8Rng::seed_from_u64(shared_seed);
        let shared = [gaussian(k, loading.dims, &mut shared_rng), gaussian(k, loading.dims, &mut shared_rng)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let private = [gaussian(k, loading.dims, &mut rng), gaussian(k, loading.dims, &mut rng)];
        let (cs, cp) = (loading.shared_fraction.sqrt(), (1.0 - loading.shared_fraction).sqrt());
        let mut w = Tensor::zeros(&[2 * k * nd, nv]);
        for v in 0..nv {
            let which = if rois.ac[v] { 0 } else { 1 };
            let zs = gaussian(loading.dims, 1, &mut rng);
            let zp = gaussian(loading.dims, 1, &mut rng);
            let load = shared[which].matmul(&zs)?.scale(cs).zip_map(&private[which].matmul(&zp)?.scale(cp), |a, b| a + b)?;
            for (d, h) in loading.delay_profile.iter().enumerate() {
                for f in 0..k {
                    w.set(which * k * nd + d * k + f, v, h * load.get(f, 0));
                }
            }
        }
        Ok(Self { id: id.to_string(), rois, w_true: w, sigma: vec![sigma; nv], seed })
    }
}

/// Noise-free signal per story, each voxel scaled to unit standard
/// deviation over all stories together.
pub fn planted_signal(subject: &SubjectSpec, designs: &[Tensor]) -> Result<Vec<Tensor>> {
    let raw: Vec<Tensor> = designs
        .iter()
        .map(|x| {
            if x.cols() != subject.w_true.rows() {
                return Err(Error::Shape(format!(
                    "teacher design has {} columns, W_true expects {}",
                    x.cols(),
                    subject.w_true.rows()
                )));
            }
            Ok(x.matmul(&subject.w_true)?)
        })
        .collect::<Result<_>>()?;
    let all = Tensor::vstack(&raw.iter().collect::<Vec<_>>())?;
    let (_, std) = crate::stats::column_moments(&all);
    Ok(raw
        .into_iter()
        .map(|s| {
            let mut s = s;
            let nv = s.cols();
            for row in s.data_mut().chunks_mut(nv) {
                for (x, sd) in row.iter_mut().zip(&std) {
                    *x = if *sd > 0.0 { *x / sd } else { 0.0 };
                }
            }
            s
        })
        .collect())
}

/// `R = zscore_per_story(signal + ε)`, `ε ~ N(0, σ_v²)` drawn per story
/// from the subject seed.
pub fn gen_responses(subject: &SubjectSpec, designs: &[Tensor]) -> Result<Vec<Tensor>> {
    let signal = planted_signal(subject, designs)?;
    signal
        .into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(subject.seed ^ (0x9e37_79b9 * (k as u64 + 1)));
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let nv = s.cols();
            for row in s.data_mut().chunks_mut(nv) {
                for (x, sd) in row.iter_mut().zip(&subject.sigma) {
                    *x += sd * n.sample(&mut rng);
                }
            }
            Ok(zscore_columns(&s))
        })
        .collect()
}
