use super::{Waveform, WindowPlan};
use crate::encoder::model::{encode, final_frames, BoundEncoder, BoundLora, FrameInput, FrameTable};
use crate::encoder::{EncoderWeights, LoraAdapterSet};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor};

/// Per-window features: one row per window, stamped with the window end.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedFeatures {
    pub times: Vec<f64>,
    pub matrix: Tensor,
}

/// Windows per inference graph.
const CHUNK: usize = 256;

/// Final-frame hidden states of each requested layer for every window.
pub fn extract_layers(
    weights: &EncoderWeights,
    adapters: Option<&LoraAdapterSet>,
    wave: &Waveform,
    plan: &WindowPlan,
    layers: &[usize],
) -> Result<Vec<WindowedFeatures>> {
    let cfg = &weights.config;
    if plan.is_empty() || layers.is_empty() {
        return Err(Error::Data("nothing to extract".into()));
    }
    if let Some(seg) = plan.segments.iter().find(|s| s.len != cfg.window_samples) {
        return Err(Error::Shape(format!(
            "window of {} samples does not match encoder window {}",
            seg.len, cfg.window_samples
        )));
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform sampled at {} Hz, encoder expects {} Hz",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    if let Some(&l) = layers.iter().find(|&&l| l > cfg.n_layers) {
        return Err(Error::Shape(format!("layer {l} beyond encoder depth {}", cfg.n_layers)));
    }
    if let Some(a) = adapters {
        a.check_compatible(weights)?;
    }
    let upto = *layers.iter().max().expect("non-empty");
    let starts = plan.starts();
    let table = FrameTable::new(cfg, &wave.samples, &starts)?;
    // The frame projection is frozen here, so embed every frame once.
    let embedded = table.samples.matmul_t(&weights.frame_proj)?;
    let f = cfg.frames_per_window();
    let d = cfg.d_model;
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(starts.len() * d); layers.len()];
    for chunk in starts.chunks(CHUNK) {
        let mut g = Graph::new();
        let enc = BoundEncoder::bind(&mut g, weights, false);
        let lora = adapters.map(|a| BoundLora::bind(&mut g, a, false));
        let emb = g.constant(embedded.clone());
        let rows = table.rows_for(chunk)?;
        let hidden = encode(&mut g, cfg, &enc, lora.as_ref(), FrameInput::Embedded(emb), rows, upto)?;
        for (slot, &l) in out.iter_mut().zip(layers) {
            let last = final_frames(&mut g, hidden[l], f)?;
            slot.extend_from_slice(g.value(last).data());
        }
    }
    let times = plan.times();
    Ok(out
        .into_iter()
        .map(|data| WindowedFeatures { times: times.clone(), matrix: Tensor::matrix(starts.len(), d, data) })
        .collect())
}

/// Row `k` is the layer-`layer` readout of window `k`.
pub fn extract_features(
    weights: &EncoderWeights,
    adapters: Option<&LoraAdapterSet>,
    wave: &Waveform,
    plan: &WindowPlan,
    layer: usize,
) -> Result<WindowedFeatures> {
    Ok(extract_layers(weights, adapters, wave, plan, &[layer])?.remove(0))
}
