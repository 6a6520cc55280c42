//! Adapter checkpoints and merged-weight exports.
//!
//! Both use the [`crate::container`] format. An adapter checkpoint has kind
//! `"lora_adapters"`, meta fields `config`, `rank`, `alpha` and `pairs`
//! (the ordered `[layer, target]` map), and two arrays per pair in that
//! order: `l{layer}.{target}.a` (`r × d`) then `l{layer}.{target}.b`
//! (`d × r`). A merged export has kind `"encoder_weights"` with one array
//! per parameter, named as in [`EncoderWeights::param_names`].

use std::path::Path;

use super::{EncoderConfig, EncoderWeights, LoraAdapterSet, LoraPair, Target};
use crate::container::Container;
use crate::error::{Error, Result};

fn pair_name(p: &LoraPair, part: &str) -> String {
    format!("l{}.{}.{part}", p.layer, p.target.as_str())
}

pub fn adapters_to_container(adapters: &LoraAdapterSet, config: &EncoderConfig) -> Container {
    let map: Vec<(usize, Target)> = adapters.pairs.iter().map(|p| (p.layer, p.target)).collect();
    let mut c = Container::new("lora_adapters")
        .with_meta("config", config)
        .with_meta("rank", adapters.rank)
        .with_meta("alpha", adapters.alpha)
        .with_meta("pairs", map);
    for p in &adapters.pairs {
        c.push(&pair_name(p, "a"), p.a.clone());
        c.push(&pair_name(p, "b"), p.b.clone());
    }
    c
}

pub fn adapters_from_container(c: &Container) -> Result<(LoraAdapterSet, EncoderConfig)> {
    c.expect_kind("lora_adapters")?;
    let config: EncoderConfig = c.meta_as("config")?;
    let rank: usize = c.meta_as("rank")?;
    let alpha: f64 = c.meta_as("alpha")?;
    let map: Vec<(usize, Target)> = c.meta_as("pairs")?;
    if rank == 0 {
        return Err(Error::Format("adapter rank 0".into()));
    }
    let mut pairs = Vec::with_capacity(map.len());
    for (layer, target) in map {
        let name = |part: &str| format!("l{layer}.{}.{part}", target.as_str());
        let a = c.array(&name("a"))?.clone();
        let b = c.array(&name("b"))?.clone();
        pairs.push(LoraPair { layer, target, a, b });
    }
    Ok((LoraAdapterSet { rank, alpha, pairs }, config))
}

pub fn save_adapters(path: impl AsRef<Path>, adapters: &LoraAdapterSet, config: &EncoderConfig) -> Result<()> {
    adapters_to_container(adapters, config).write(path)
}

pub fn load_adapters(path: impl AsRef<Path>) -> Result<(LoraAdapterSet, EncoderConfig)> {
    adapters_from_container(&Container::read(path)?)
}

pub fn weights_to_container(weights: &EncoderWeights) -> Container {
    let mut c = Container::new("encoder_weights").with_meta("config", &weights.config);
    for (name, t) in weights.param_names().iter().zip(weights.tensors()) {
        c.push(name, t.clone());
    }
    c
}

pub fn weights_from_container(c: &Container) -> Result<EncoderWeights> {
    c.expect_kind("encoder_weights")?;
    let config: EncoderConfig = c.meta_as("config")?;
    let mut w = EncoderWeights::init(&config)?;
    let names = w.param_names();
    for (name, slot) in names.iter().zip(w.tensors_mut()) {
        let t = c.array(name)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t.clone();
    }
    Ok(w)
}
