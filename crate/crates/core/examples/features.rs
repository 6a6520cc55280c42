//! Waveform to volume-aligned, delay-stacked encoder features.

use neuroencode::featurize::{design_matrix, volume_features};
use neuroencode::synthdata::{make_dataset, SynthConfig};

fn main() -> neuroencode::error::Result<()> {
    let ds = make_dataset(&SynthConfig::small())?;
    let enc = ds.base_encoder()?;
    let story = &ds.stories[0];
    let cfg = &ds.config.featurize;
    let layers: Vec<usize> = (0..=enc.config.n_layers).collect();
    let per_layer = volume_features(&enc, None, &story.wave, cfg, &story.volume_times(ds.tr()), &layers)?;
    for (l, m) in layers.iter().zip(&per_layer) {
        println!("layer {l}: {} volumes x {} features", m.rows(), m.cols());
    }
    let x = design_matrix(&per_layer[enc.config.readout_layer], ds.tr(), &cfg.delays)?;
    println!("design with delays {:?}: {} x {}", cfg.delays, x.rows(), x.cols());
    Ok(())
}
