//! Log mel filterbank energies.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Waveform;
use crate::gradcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterbankConfig {
    pub n_mels: usize,
    pub frame_s: f64,
    pub hop_s: f64,
    pub f_min: f64,
    /// `None` uses the Nyquist frequency.
    pub f_max: Option<f64>,
    /// Energies are clamped to this before the log.
    pub floor: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self { n_mels: 24, frame_s: 0.2, hop_s: 0.1, f_min: 0.0, f_max: None, floor: 1e-10 }
    }
}

/// One row per frame; times are frame end times.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankFeatures {
    pub times: Vec<f64>,
    pub matrix: Tensor,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the `n_mels` triangular filters.
pub fn mel_centers(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (1..=n_mels).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect()
}

/// `n_mels × (n_fft/2 + 1)` triangular weights on the FFT bin grid.
pub fn mel_filters(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Tensor {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let n_bins = n_fft / 2 + 1;
    let mut w = Tensor::zeros(&[n_mels, n_bins]);
    for m in 0..n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * sample_rate / n_fft as f64;
            let v = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            w.set(m, b, v);
        }
    }
    w
}

/// Hann-windowed power spectrum per frame, pooled by mel filters and
/// log-compressed.
pub fn compute_filterbank(wave: &Waveform, cfg: &FilterbankConfig) -> Result<FilterbankFeatures> {
    let rate = wave.sample_rate as f64;
    let frame = (cfg.frame_s * rate).round() as usize;
    let hop = (cfg.hop_s * rate).round() as usize;
    if frame < 2 || hop == 0 || cfg.n_mels == 0 || !(cfg.floor > 0.0) {
        return Err(Error::Config(format!("invalid filterbank config {cfg:?}")));
    }
    if frame > wave.samples.len() {
        return Err(Error::Data(format!("frame of {frame} samples longer than waveform ({})", wave.samples.len())));
    }
    let f_max = cfg.f_max.unwrap_or(rate / 2.0);
    if !(cfg.f_min >= 0.0 && cfg.f_min < f_max && f_max <= rate / 2.0) {
        return Err(Error::Config(format!("band [{}, {f_max}] Hz outside [0, Nyquist]", cfg.f_min)));
    }
    let n_fft = frame.next_power_of_two();
    let filters = mel_filters(cfg.n_mels, n_fft, rate, cfg.f_min, f_max);
    let hann: Vec<f64> =
        (0..frame).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (frame - 1) as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let n_frames = (wave.samples.len() - frame) / hop + 1;
    let n_bins = n_fft / 2 + 1;
    let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
    let mut times = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for k in 0..n_frames {
        let start = k * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if i < frame { wave.samples[start + i] * hann[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for m in 0..cfg.n_mels {
            let e: f64 = filters.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(cfg.floor).ln());
        }
        times.push((start + frame) as f64 / rate);
    }
    Ok(FilterbankFeatures { times, matrix: Tensor::matrix(n_frames, cfg.n_mels, out) })
}
