use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const DEFAULT_DELAYS: [f64; 4] = [2.0, 4.0, 6.0, 8.0];

/// Row shift for each delay; errors when a delay is not a whole number of
/// volumes.
pub fn delay_shifts(tr: f64, delays: &[f64]) -> Result<Vec<usize>> {
    if tr <= 0.0 {
        return Err(Error::Config(format!("tr {tr} must be positive")));
    }
    delays
        .iter()
        .map(|&d| {
            let q = d / tr;
            let n = q.round();
            if d < 0.0 || (q - n).abs() > 1e-9 {
                Err(Error::Config(format!("delay {d}s is not a whole number of {tr}s volumes")))
            } else {
                Ok(n as usize)
            }
        })
        .collect()
}

/// Concatenates copies of `v` shifted down by each shift, zero-filled above.
pub fn shift_stack(v: &Tensor, shifts: &[usize]) -> Tensor {
    let (t, p) = (v.rows(), v.cols());
    let width = p * shifts.len();
    let mut out = Tensor::zeros(&[t, width]);
    for (b, &s) in shifts.iter().enumerate() {
        for i in s..t {
            let src = v.row(i - s);
            out.data_mut()[i * width + b * p..i * width + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[v shifted by d₁/tr | v shifted by d₂/tr | …]`, `T × (P·n_delays)`.
pub fn delay_stack(v: &Tensor, tr: f64, delays: &[f64]) -> Result<Tensor> {
    if delays.is_empty() {
        return Err(Error::Config("no delays".into()));
    }
    Ok(shift_stack(v, &delay_shifts(tr, delays)?))
}

/// Row indices feeding each output row of block `shift`; `None` marks
/// zero padding. Used to build the same stack inside a graph.
pub fn shifted_rows(t: usize, shift: usize) -> Vec<Option<usize>> {
    (0..t).map(|i| i.checked_sub(shift)).collect()
}
