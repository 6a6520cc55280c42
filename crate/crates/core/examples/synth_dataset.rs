//! Generate a small planted-teacher dataset and write it to disk.
//!
//! cargo run --release --example synth_dataset -- /tmp/neuroencode-ds

use neuroencode::synthdata::{make_dataset, Dataset, SynthConfig};

fn main() -> neuroencode::error::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "neuroencode-ds".into());
    let ds = make_dataset(&SynthConfig::small())?;
    let checksum = ds.write(&dir)?;
    println!("wrote {} stories to {dir} (checksum {checksum})", ds.stories.len());
    for s in &ds.subjects {
        println!("{}: {} voxels, sigma {:.3}", s.id, s.rois.n_voxels(), s.sigma);
    }
    assert_eq!(Dataset::read(&dir)?, ds);
    Ok(())
}
