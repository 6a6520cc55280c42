use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Waveform;

/// One spoken "word": a token with a fixed spectral signature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub word: usize,
    pub onset: f64,
    pub duration: f64,
}

impl TokenEvent {
    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorySpec {
    pub id: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub tokens: Vec<TokenEvent>,
}

/// Token schedule parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub vocab: usize,
    pub min_token_s: f64,
    pub max_token_s: f64,
    pub min_gap_s: f64,
    pub max_gap_s: f64,
    /// Period range of the slow speech-rate modulation.
    pub rate_period_s: (f64, f64),
    /// Period range of each word's slow salience drift.
    pub salience_period_s: (f64, f64),
    /// Softmax gain on word salience; 0 (default) draws words uniformly.
    pub salience_gain: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            vocab: 48,
            min_token_s: 0.25,
            max_token_s: 0.45,
            min_gap_s: 0.05,
            max_gap_s: 0.6,
            rate_period_s: (15.0, 50.0),
            salience_period_s: (10.0, 60.0),
            salience_gain: 0.0,
        }
    }
}

/// Non-overlapping token schedule over `[0, duration_s)`. Gap lengths
/// follow a slow random modulation so word rate drifts over the story, and
/// each word's probability follows its own slow salience curve, so the
/// word mix changes along many independent directions.
pub fn schedule_tokens(duration_s: f64, cfg: &ScheduleConfig, seed: u64) -> Vec<TokenEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70_6b_65_6e);
    let period = rng.random_range(cfg.rate_period_s.0..cfg.rate_period_s.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    let salience: Vec<[(f64, f64); 2]> = (0..cfg.vocab)
        .map(|_| {
            let mut c = || {
                (rng.random_range(cfg.salience_period_s.0..cfg.salience_period_s.1), rng.random_range(0.0..2.0 * PI))
            };
            [c(), c()]
        })
        .collect();
    let mut weights = vec![0.0; cfg.vocab];
    let mut t = rng.random_range(0.0..cfg.max_gap_s);
    let mut out = Vec::new();
    loop {
        let dur = rng.random_range(cfg.min_token_s..cfg.max_token_s);
        if t + dur >= duration_s || cfg.vocab == 0 {
            break;
        }
        for (w, curve) in weights.iter_mut().zip(&salience) {
            let g: f64 = curve.iter().map(|(p, ph)| (2.0 * PI * t / p + ph).sin()).sum();
            *w = (cfg.salience_gain * g).exp();
        }
        let total: f64 = weights.iter().sum();
        let mut u = rng.random_range(0.0..total);
        let mut word = cfg.vocab - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                word = i;
                break;
            }
            u -= w;
        }
        out.push(TokenEvent { word, onset: t, duration: dur });
        let slow = 0.5 + 0.5 * (2.0 * PI * t / period + phase).sin();
        let gap = cfg.min_gap_s + (cfg.max_gap_s - cfg.min_gap_s) * slow * rng.random_range(0.5..1.0);
        t += dur + gap;
    }
    out
}

/// Per-word spectral signature: three partials with fixed amplitudes.
fn signature(word: usize, nyquist: f64) -> [(f64, f64); 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5157_0000 + word as u64);
    let f0 = rng.random_range(40.0..0.3 * nyquist);
    let ratio = rng.random_range(1.3..2.7);
    let f2 = rng.random_range(0.3 * nyquist..0.85 * nyquist);
    [(f0, rng.random_range(0.5..1.0)), (f0 * ratio, rng.random_range(0.2..0.8)), (f2, rng.random_range(0.1..0.6))]
}

/// Background: white noise split into a low and a high band whose mix
/// drifts slowly, plus the token partials under a Hann envelope.
pub fn gen_waveform(spec: &StorySpec) -> Result<Waveform> {
    let rate = spec.sample_rate as f64;
    let n = (spec.duration_s * rate).round() as usize;
    if n == 0 {
        return Err(Error::Config(format!("story {} has no samples", spec.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let periods: Vec<(f64, f64)> =
        (0..2).map(|_| (rng.random_range(8.0..40.0), rng.random_range(0.0..2.0 * PI))).collect();
    let mut low = 0.0;
    let mut prev = 0.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let e: f64 = normal.sample(&mut rng);
        low = 0.9 * low + 0.1 * e;
        let high = e - prev;
        prev = e;
        let mix = 0.5 + 0.05 * periods.iter().map(|(p, ph)| (2.0 * PI * t / p + ph).sin()).sum::<f64>();
        samples.push(0.08 * (mix * low * 3.0 + (1.0 - mix) * high * 0.5));
    }
    let nyq = rate / 2.0;
    for tok in &spec.tokens {
        let sig = signature(tok.word, nyq);
        let i0 = (tok.onset * rate).ceil() as usize;
        let i1 = ((tok.offset() * rate).ceil() as usize).min(n);
        for (i, s) in samples.iter_mut().enumerate().take(i1).skip(i0) {
            let t = i as f64 / rate;
            let u = (t - tok.onset) / tok.duration;
            let env = 0.5 - 0.5 * (2.0 * PI * u).cos();
            let tone: f64 = sig.iter().map(|(f, a)| a * (2.0 * PI * f * (t - tok.onset)).sin()).sum();
            *s += 0.25 * env * tone;
        }
    }
    let mut w = Waveform::new(samples, spec.sample_rate)?;
    w.quantize_pcm16();
    Ok(w)
}
