//! Every command of the CLI in order on a small configuration.
//!
//! cargo run --release --example pipeline -- /tmp/neuroencode-run

use neuroencode::pipeline::{run_all, RunConfig};

fn main() -> neuroencode::error::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "neuroencode-run".into());
    for summary in run_all(&RunConfig::small(out))? {
        println!("{summary}");
    }
    Ok(())
}
