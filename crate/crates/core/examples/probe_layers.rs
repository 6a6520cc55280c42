//! Filterbank and word-embedding probes across encoder layers.

use neuroencode::probes::{probe_csv, probe_sweep, ProbeSweepConfig};
use neuroencode::ridge::CvConfig;
use neuroencode::synthdata::{make_dataset, SynthConfig};

fn main() -> neuroencode::error::Result<()> {
    let ds = make_dataset(&SynthConfig::small())?;
    let base = ds.base_encoder()?;
    let teacher = ds.teacher()?.weights;
    let cfg = ProbeSweepConfig { cv: CvConfig { n_folds: 3, chunk_length: 50, ..CvConfig::default() }, ..Default::default() };
    let cells = probe_sweep(&ds, &base, &[("teacher".into(), teacher)], &cfg)?;
    print!("{}", probe_csv(&cells));
    Ok(())
}
