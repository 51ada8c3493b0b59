use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qndmt_cli::{Mode, Overrides, Pipeline, Result, RunConfig};

#[derive(Parser)]
#[command(name = "qndmt", version, about = "Parallel QND measurement tomography pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    shots: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Bootstrap resamples (0 skips the bootstrap).
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the circuit schedule and manifest.
    Generate,
    /// Sample counts for the schedule on the configured device model.
    Simulate,
    /// Reconstruct gate sets and measurement Choi matrices.
    Reconstruct,
    /// Compute quantifiers and their bootstrap deviations.
    Quantify,
    /// Write tables and plot-ready CSVs.
    Report,
    /// Run every stage in order.
    All,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModeArg {
    Direct,
    Reset,
    Both,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Direct => Mode::Direct,
            ModeArg::Reset => Mode::MeasureAndReset,
            ModeArg::Both => Mode::Both,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        shots: cli.shots,
        seed: cli.seed,
        jobs: cli.jobs,
        mode: cli.mode.map(Mode::from),
        bootstrap: cli.bootstrap,
    })?;
    let pipeline = Pipeline::new(cfg)?;
    match cli.command {
        Command::Generate | Command::All => {
            let summaries = match cli.command {
                Command::All => pipeline.all()?,
                _ => pipeline.generate()?,
            };
            for s in summaries {
                println!(
                    "{}: {} color groups, {} batches, {} optimization problems",
                    s.variant, s.color_groups, s.batches, s.problems
                );
            }
        }
        Command::Simulate => pipeline.simulate()?,
        Command::Reconstruct => {
            for (v, est) in pipeline.reconstruct()? {
                let failed = est.logs.iter().filter(|l| !l.converged).count();
                println!("{v}: {} problems solved, {failed} unconverged", est.logs.len());
            }
        }
        Command::Quantify => {
            pipeline.quantify()?;
        }
        Command::Report => pipeline.report()?,
    }
    println!("output in {}", pipeline.root().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
