use super::Waveform;
use crate::error::{Error, Result};

/// One analysis window: samples `[start, start + len)`, stamped with its
/// end time in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub time: f64,
}

impl Segment {
    pub fn samples<'a>(&self, w: &'a Waveform) -> &'a [f64] {
        &w.samples[self.start..self.start + self.len]
    }
}

/// Window plan for a waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPlan {
    pub segments: Vec<Segment>,
    pub stride_s: f64,
}

impl WindowPlan {
    pub fn times(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.time).collect()
    }

    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

fn to_samples(seconds: f64, rate: u32, what: &str) -> Result<usize> {
    let exact = seconds * rate as f64;
    let n = exact.round();
    if n < 1.0 || (exact - n).abs() > 1e-6 {
        return Err(Error::Config(format!("{what} of {seconds}s is not a positive whole number of samples")));
    }
    Ok(n as usize)
}

/// Slides a `win_s` window with stride `stride_s` over `w`. Window `k`
/// covers `[k·stride, k·stride + win)` and is timestamped at its end.
pub fn slide_windows(w: &Waveform, win_s: f64, stride_s: f64) -> Result<WindowPlan> {
    let win = to_samples(win_s, w.sample_rate, "window")?;
    let stride = to_samples(stride_s, w.sample_rate, "stride")?;
    if w.samples.len() < win {
        return Err(Error::Data(format!(
            "waveform of {:.3}s is shorter than the {win_s}s window",
            w.duration()
        )));
    }
    let n = (w.samples.len() - win) / stride + 1;
    let rate = w.sample_rate as f64;
    let segments = (0..n)
        .map(|k| Segment { start: k * stride, len: win, time: (k * stride + win) as f64 / rate })
        .collect();
    Ok(WindowPlan { segments, stride_s })
}
