use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use turnpike_lab::{run, Experiment, ExperimentConfig, LabError};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Exp0,
    SweepLambda2,
    SweepKappa,
    Stationary,
    Rate,
    Escape,
    Landscape,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Exp0 => Experiment::Exp0,
            Command::SweepLambda2 => Experiment::SweepLambda2,
            Command::SweepKappa => Experiment::SweepKappa,
            Command::Stationary => Experiment::Stationary,
            Command::Rate => Experiment::Rate,
            Command::Escape => Experiment::Escape,
            Command::Landscape => Experiment::Landscape,
        }
    }
}

/// Run one turnpike experiment from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "turnpike-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// dotted override, e.g. `--set model.a_diag=[1.0,0.3]`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// output directory (default: `output_dir` from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// exit with status 4 if any acceptance threshold fails
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = ExperimentConfig::load(&cli.config, &cli.set).and_then(|c| c.resolve(cli.command.into())).and_then(|cfg| {
        let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        run(&cfg, &out)
    });
    match result {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if cli.check && !outcome.passed() {
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &LabError) -> u8 {
    e.exit_code() as u8
}
