use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Data("empty waveform".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Rounds every sample onto the 16-bit PCM grid so that a WAV round
    /// trip is lossless.
    pub fn quantize_pcm16(&mut self) {
        for s in &mut self.samples {
            *s = (s.clamp(-1.0, 1.0) * 32767.0).round() / 32767.0;
        }
    }

    /// Writes a 16-bit PCM mono WAV file (standard RIFF header).
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Format("expected 16-bit PCM mono WAV".into()));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32767.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }
}
