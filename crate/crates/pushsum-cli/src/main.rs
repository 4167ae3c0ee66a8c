use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pushsum_cli::{run, CliError, Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Topology,
    Train,
    Stability,
    Bounds,
    Sweep,
}

/// Push-Sum / SGP experiment runner.
#[derive(Debug, Parser)]
#[command(name = "pushsum", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

fn execute(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    let command = match args.command {
        Cmd::Topology => Command::Topology,
        Cmd::Train => Command::Train,
        Cmd::Stability => Command::Stability,
        Cmd::Bounds => Command::Bounds,
        Cmd::Sweep => Command::Sweep,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(command, &config))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
