use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel subset selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiScope {
    All,
    Ac,
    NonAc,
    Left,
    Right,
}

impl RoiScope {
    pub const ALL: [RoiScope; 5] = [RoiScope::All, RoiScope::Ac, RoiScope::NonAc, RoiScope::Left, RoiScope::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            RoiScope::All => "all",
            RoiScope::Ac => "ac",
            RoiScope::NonAc => "non_ac",
            RoiScope::Left => "left",
            RoiScope::Right => "right",
        }
    }
}

impl fmt::Display for RoiScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoiScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoiScope::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown roi '{s}' (expected all, ac, non_ac, left, right)")))
    }
}

/// Per-voxel labels for both partition schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rois {
    pub ac: Vec<bool>,
    pub left: Vec<bool>,
}

impl Rois {
    /// `n_ac` auditory-cortex voxels split evenly across hemispheres; the
    /// first half of voxel indices is the left hemisphere.
    pub fn generate(n_voxels: usize, n_ac: usize, seed: u64) -> Result<Self> {
        if n_ac > n_voxels {
            return Err(Error::Config(format!("{n_ac} AC voxels exceed {n_voxels} voxels")));
        }
        let half = n_voxels / 2;
        let left: Vec<bool> = (0..n_voxels).map(|v| v < half).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a_c0);
        let mut l: Vec<usize> = (0..half).collect();
        let mut r: Vec<usize> = (half..n_voxels).collect();
        l.shuffle(&mut rng);
        r.shuffle(&mut rng);
        let mut ac = vec![false; n_voxels];
        let n_left = n_ac.div_ceil(2).min(l.len());
        let n_right = n_ac - n_left;
        if n_right > r.len() {
            return Err(Error::Config("too many AC voxels for the right hemisphere".into()));
        }
        for &v in l.iter().take(n_left).chain(r.iter().take(n_right)) {
            ac[v] = true;
        }
        Ok(Self { ac, left })
    }

    pub fn n_voxels(&self) -> usize {
        self.ac.len()
    }

    pub fn indices(&self, scope: RoiScope) -> Vec<usize> {
        (0..self.n_voxels())
            .filter(|&v| match scope {
                RoiScope::All => true,
                RoiScope::Ac => self.ac[v],
                RoiScope::NonAc => !self.ac[v],
                RoiScope::Left => self.left[v],
                RoiScope::Right => !self.left[v],
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ac.len() != self.left.len() || self.ac.is_empty() {
            return Err(Error::Data("ROI label vectors must be non-empty and equal length".into()));
        }
        Ok(())
    }
}
