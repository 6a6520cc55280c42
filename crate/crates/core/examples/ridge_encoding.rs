//! Pre-trained encoding model: ridge with per-voxel CV alphas, scored by
//! temporal correlation on held-out stories.

use neuroencode::finetune::{fit_and_score, story_features};
use neuroencode::synthdata::{make_dataset, RoiScope, SynthConfig};

fn main() -> neuroencode::error::Result<()> {
    let ds = make_dataset(&SynthConfig::small())?;
    let feats = story_features(&ds, &ds.base_encoder()?, None)?;
    for s in &ds.subjects {
        let ev = fit_and_score(&ds, &s.responses, &feats)?;
        let mut alphas = ev.fit.alpha_per_voxel.clone();
        alphas.sort_by(f64::total_cmp);
        println!(
            "{}: val rho {:.3}, test rho {:.3} (AC {:.3}), median alpha {:.3}",
            s.id,
            ev.val.mean(),
            ev.test.mean(),
            ev.test.mean_over(&s.rois.indices(RoiScope::Ac)),
            alphas[alphas.len() / 2]
        );
    }
    Ok(())
}
