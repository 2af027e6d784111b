use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sceme::harness::{HarnessError, RunConfig, RunDir, Stage};

#[derive(Parser)]
#[command(
    name = "sceme",
    version,
    about = "Context-consistency detection of adversarial region perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Directory holding the artifacts of this run.
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training, held-out and evaluation corpora.
    GenCorpus(Common),
    /// Train the context model and autoencoders, calibrate thresholds.
    Train(Common),
    /// Build the attacked evaluation corpora.
    Attack(Common),
    /// Score the attacked corpora and write per-region results.
    Detect(Common),
    /// Every stage that has not run yet, then the report.
    Eval(Common),
    /// Render the summary from stored results.
    Report(Common),
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (stage, common) = match cli.command {
        Command::GenCorpus(c) => (Stage::GenCorpus, c),
        Command::Train(c) => (Stage::Train, c),
        Command::Attack(c) => (Stage::Attack, c),
        Command::Detect(c) => (Stage::Detect, c),
        Command::Eval(c) => (Stage::Eval, c),
        Command::Report(c) => (Stage::Report, c),
    };
    let cfg = RunConfig::load(&common.config)?;
    let dir = RunDir::open(&common.run_dir, cfg)?;
    log::info!("{} in {}", stage.name(), common.run_dir.display());
    dir.run(stage)?;
    if matches!(stage, Stage::Eval | Stage::Report) {
        println!("{}", dir.path("summary.md").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
