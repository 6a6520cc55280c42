//! Graph construction for the encoder forward pass.
//!
//! Windows are processed as a batch: every window contributes
//! `frames_per_window` consecutive rows, and attention is restricted to
//! each window's own block of rows.

use std::collections::BTreeMap;

use super::{EncoderConfig, EncoderWeights, LoraAdapterSet, Target};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};

pub struct BoundLayer {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ff_in: Var,
    pub ff_out: Var,
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
}

/// Encoder parameters registered as graph leaves.
pub struct BoundEncoder {
    pub frame_proj: Var,
    pub input_gain: Var,
    pub input_bias: Var,
    pub layers: Vec<BoundLayer>,
}

impl BoundEncoder {
    pub fn bind(g: &mut Graph, w: &EncoderWeights, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| g.leaf(t.clone(), trainable);
        let frame_proj = leaf(&w.frame_proj);
        let input_gain = leaf(&w.input_gain);
        let input_bias = leaf(&w.input_bias);
        let layers = w
            .layers
            .iter()
            .map(|l| BoundLayer {
                wq: leaf(&l.wq),
                wk: leaf(&l.wk),
                wv: leaf(&l.wv),
                wo: leaf(&l.wo),
                ff_in: leaf(&l.ff_in),
                ff_out: leaf(&l.ff_out),
                norm1_gain: leaf(&l.norm1_gain),
                norm1_bias: leaf(&l.norm1_bias),
                norm2_gain: leaf(&l.norm2_gain),
                norm2_bias: leaf(&l.norm2_bias),
            })
            .collect();
        Self { frame_proj, input_gain, input_bias, layers }
    }

    /// Leaves in the order of [`EncoderWeights::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.frame_proj, self.input_gain, self.input_bias];
        for l in &self.layers {
            out.extend([
                l.wq,
                l.wk,
                l.wv,
                l.wo,
                l.ff_in,
                l.ff_out,
                l.norm1_gain,
                l.norm1_bias,
                l.norm2_gain,
                l.norm2_bias,
            ]);
        }
        out
    }
}

pub struct BoundLora {
    pub scale: f64,
    pub pairs: Vec<(usize, Target, Var, Var)>,
}

impl BoundLora {
    pub fn bind(g: &mut Graph, adapters: &LoraAdapterSet, trainable: bool) -> Self {
        let pairs = adapters
            .pairs
            .iter()
            .map(|p| (p.layer, p.target, g.leaf(p.a.clone(), trainable), g.leaf(p.b.clone(), trainable)))
            .collect();
        Self { scale: adapters.scale(), pairs }
    }

    /// Leaves in the order of [`LoraAdapterSet::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.pairs.iter().flat_map(|&(_, _, a, b)| [a, b]).collect()
    }

    fn get(&self, layer: usize, target: Target) -> Option<(Var, Var)> {
        self.pairs.iter().find(|p| p.0 == layer && p.1 == target).map(|p| (p.2, p.3))
    }
}

/// Raw frames for a set of windows over one signal.
///
/// Frames shared by overlapping windows are stored once; `rows_for`
/// maps window start offsets to rows of [`FrameTable::samples`].
pub struct FrameTable {
    pub samples: Tensor,
    index: BTreeMap<usize, usize>,
    frame_size: usize,
    frame_stride: usize,
    frames_per_window: usize,
}

impl FrameTable {
    pub fn new(cfg: &EncoderConfig, signal: &[f64], window_starts: &[usize]) -> Result<Self> {
        let f = cfg.frames_per_window();
        let mut starts = BTreeMap::new();
        for &w in window_starts {
            if w + cfg.window_samples > signal.len() {
                return Err(Error::Shape(format!(
                    "window at sample {w} runs past the end of a {}-sample signal",
                    signal.len()
                )));
            }
            for j in 0..f {
                starts.insert(w + j * cfg.frame_stride, 0);
            }
        }
        if starts.is_empty() {
            return Err(Error::Shape("no windows".into()));
        }
        let mut data = Vec::with_capacity(starts.len() * cfg.frame_size);
        for (row, (s, slot)) in starts.iter_mut().enumerate() {
            *slot = row;
            data.extend_from_slice(&signal[*s..*s + cfg.frame_size]);
        }
        Ok(Self {
            samples: Tensor::matrix(starts.len(), cfg.frame_size, data),
            index: starts,
            frame_size: cfg.frame_size,
            frame_stride: cfg.frame_stride,
            frames_per_window: f,
        })
    }

    /// Frame-row indices for windows starting at the given sample offsets.
    pub fn rows_for(&self, window_starts: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(window_starts.len() * self.frames_per_window);
        for &w in window_starts {
            for j in 0..self.frames_per_window {
                let s = w + j * self.frame_stride;
                let r = self
                    .index
                    .get(&s)
                    .ok_or_else(|| Error::Shape(format!("frame at sample {s} not in table")))?;
                out.push(*r);
            }
        }
        Ok(out)
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }
}

/// Frame-level input to [`encode`]: either raw frame samples (projected
/// inside the graph) or already-projected embeddings (frozen projection).
pub enum FrameInput {
    Samples(Var),
    Embedded(Var),
}

/// Sinusoidal position table, `frames × d`.
pub fn positional_table(frames: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[frames, d]);
    for pos in 0..frames {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

fn project(g: &mut Graph, x: Var, w: Var, lora: Option<(Var, Var, f64)>) -> Result<Var> {
    let base = g.matmul_t(x, w)?;
    match lora {
        None => Ok(base),
        Some((a, b, scale)) => {
            let down = g.matmul_t(x, a)?;
            let up = g.matmul_t(down, b)?;
            let up = g.scale(up, scale)?;
            Ok(g.add(base, up)?)
        }
    }
}

/// Runs the encoder over `n_windows` windows whose frames are gathered
/// from `input` by `rows`. Returns hidden states for layers `0..=upto`,
/// each `(n_windows · frames) × d_model`; layer 0 is the frame encoder.
pub fn encode(
    g: &mut Graph,
    cfg: &EncoderConfig,
    enc: &BoundEncoder,
    lora: Option<&BoundLora>,
    input: FrameInput,
    rows: Vec<usize>,
    upto: usize,
) -> Result<Vec<Var>> {
    let f = cfg.frames_per_window();
    if rows.is_empty() || rows.len() % f != 0 {
        return Err(Error::Shape(format!("{} frame rows is not a whole number of windows", rows.len())));
    }
    if upto > cfg.n_layers {
        return Err(Error::Shape(format!("layer {upto} beyond encoder depth {}", cfg.n_layers)));
    }
    let n_windows = rows.len() / f;
    let emb = match input {
        FrameInput::Samples(s) => g.matmul_t(s, enc.frame_proj)?,
        FrameInput::Embedded(e) => e,
    };
    let frames = g.gather_rows(emb, rows.into_iter().map(Some).collect())?;
    let pos_one = positional_table(f, cfg.d_model);
    let mut pos = Vec::with_capacity(n_windows * f * cfg.d_model);
    for _ in 0..n_windows {
        pos.extend_from_slice(pos_one.data());
    }
    let pos = g.constant(Tensor::matrix(n_windows * f, cfg.d_model, pos));
    let x = g.add(frames, pos)?;
    let mut h = g.layer_norm(x, enc.input_gain, enc.input_bias)?;
    let mut hidden = vec![h];
    for (li, l) in enc.layers.iter().enumerate().take(upto) {
        let adapter = |t: Target| lora.and_then(|b| b.get(li, t).map(|(a, bb)| (a, bb, b.scale)));
        let q = project(g, h, l.wq, adapter(Target::Q))?;
        let k = project(g, h, l.wk, adapter(Target::K))?;
        let v = project(g, h, l.wv, adapter(Target::V))?;
        let att = g.attention(q, k, v, cfg.n_heads, f)?;
        let o = g.matmul_t(att, l.wo)?;
        let r1 = g.add(h, o)?;
        let h1 = g.layer_norm(r1, l.norm1_gain, l.norm1_bias)?;
        let ff = g.matmul_t(h1, l.ff_in)?;
        let ff = g.gelu(ff)?;
        let ff = g.matmul_t(ff, l.ff_out)?;
        let r2 = g.add(h1, ff)?;
        h = g.layer_norm(r2, l.norm2_gain, l.norm2_bias)?;
        hidden.push(h);
    }
    Ok(hidden)
}

/// Selects the final-frame row of every window from a hidden-state batch.
pub fn final_frames(g: &mut Graph, hidden: Var, frames_per_window: usize) -> Result<Var> {
    let n = g.value(hidden).rows();
    let idx = (0..n / frames_per_window).map(|w| Some(w * frames_per_window + frames_per_window - 1)).collect();
    Ok(g.gather_rows(hidden, idx)?)
}

/// Hidden states of every layer for a single window, each `frames × d_model`.
pub fn forward(
    weights: &EncoderWeights,
    adapters: Option<&LoraAdapterSet>,
    window: &[f64],
) -> Result<Vec<Tensor>> {
    let cfg = &weights.config;
    if window.len() != cfg.window_samples {
        return Err(Error::Shape(format!(
            "window has {} samples, encoder expects {}",
            window.len(),
            cfg.window_samples
        )));
    }
    if let Some(a) = adapters {
        a.check_compatible(weights)?;
    }
    let table = FrameTable::new(cfg, window, &[0])?;
    let rows = table.rows_for(&[0])?;
    let mut g = Graph::new();
    let enc = BoundEncoder::bind(&mut g, weights, false);
    let lora = adapters.map(|a| BoundLora::bind(&mut g, a, false));
    let s = g.constant(table.samples);
    let hidden = encode(&mut g, cfg, &enc, lora.as_ref(), FrameInput::Samples(s), rows, cfg.n_layers)?;
    Ok(hidden.into_iter().map(|h| g.value(h).clone()).collect())
}

/// Final-frame hidden state of layer `layer`.
pub fn readout(hidden: &[Tensor], layer: usize) -> Result<Vec<f64>> {
    let h = hidden
        .get(layer)
        .ok_or_else(|| Error::Shape(format!("layer {layer} out of range (have {})", hidden.len())))?;
    Ok(h.row(h.rows() - 1).to_vec())
}
