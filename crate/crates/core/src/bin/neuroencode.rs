use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use neuroencode::pipeline::{run_command, Command, RunConfig};
use neuroencode::synthdata::RoiScope;

/// Fine-tune a speech encoder to predict brain responses.
///
/// Worker threads come from NEUROENCODE_THREADS (default: all cores).
#[derive(Parser)]
#[command(name = "neuroencode", version)]
struct Cli {
    /// gen | features | fit | finetune | eval | transfer | probe | report
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// all | ac | non_ac | left | right
    #[arg(long)]
    roi: Option<RoiScope>,
    /// Restrict fine-tuning to one subject.
    #[arg(long)]
    subject: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = RunConfig::load(&cli.config)
        .map(|c| c.with_overrides(cli.roi, cli.subject, cli.out, cli.seed))
        .and_then(|c| run_command(cli.command, &c));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
