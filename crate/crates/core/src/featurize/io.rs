use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Volume-aligned (optionally delay-stacked) features as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub matrix: Tensor,
    pub tr: f64,
    /// Empty when the matrix is not delay-stacked.
    pub delays: Vec<f64>,
    pub layer: usize,
    pub source_model_checksum: String,
}

pub const FEATURE_KIND: &str = "features";

impl FeatureFile {
    pub fn to_container(&self, single_precision: bool) -> Container {
        let mut c = Container::new(FEATURE_KIND)
            .with_meta("tr", self.tr)
            .with_meta("delays", &self.delays)
            .with_meta("layer", self.layer)
            .with_meta("source_model_checksum", &self.source_model_checksum);
        if single_precision {
            c.push_f32("matrix", self.matrix.clone());
        } else {
            c.push("matrix", self.matrix.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(FEATURE_KIND)?;
        let matrix = c.array("matrix")?.clone();
        if !matrix.is_matrix() {
            return Err(Error::Format("feature matrix must be 2-D".into()));
        }
        Ok(Self {
            matrix,
            tr: c.meta_as("tr")?,
            delays: c.meta_as("delays")?,
            layer: c.meta_as("layer")?,
            source_model_checksum: c.meta_as("source_model_checksum")?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container(false).write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
