//! A few epochs of LoRA fine-tuning on one subject.

use neuroencode::finetune::{run_finetune, TrainConfig};
use neuroencode::synthdata::{make_dataset, SynthConfig};

fn main() -> neuroencode::error::Result<()> {
    let ds = make_dataset(&SynthConfig::small())?;
    let cfg = TrainConfig { learning_rate: 5e-3, epochs: 4, batch_trs: 10, ..TrainConfig::default() };
    let run = run_finetune(&ds, "S1", &cfg, None)?;
    for r in &run.reports {
        println!("epoch {}: loss {:?} val {:?}", r.epoch, r.train_loss, r.val_rho);
    }
    println!(
        "best epoch {}: test rho {:.3} vs {:.3} pre-trained",
        run.best_epoch,
        run.best.test.mean(),
        run.baseline.test.mean()
    );
    Ok(())
}
