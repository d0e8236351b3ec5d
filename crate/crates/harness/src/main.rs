use clap::{Parser, Subcommand, ValueEnum};
use kinetic_harness::{emit, load_config, run_experiment, Format, Mode};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kinetic", version, about = "Particle simulation and coupling checks for the homogeneous Boltzmann equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve independent replicas and record moments.
    Simulate(Opts),
    /// Run coupled pairs and record the contraction ledger.
    Couple(Opts),
    /// Coupled runs plus pass/fail predicates; exits with 2 on failure.
    Verify(Opts),
    /// Exact transport distance between two point files.
    W1(Opts),
    /// Evaluate a stability or moment envelope on a time grid.
    Bounds(Opts),
}

#[derive(ValueEnum, Clone, Copy)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Opts {
    /// Line-oriented key=value experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutFormat,
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads for replicas.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn run(mode: Mode, opts: &Opts) -> kinetic_harness::Result<bool> {
    let mut cfg = load_config(&opts.config, Some(mode))?;
    cfg.apply_seed_offset(opts.seed_offset);
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let report = run_experiment(&cfg, opts.workers)?;
    let format = match opts.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let written = emit(&report, format, &opts.out)?;
    for r in report.replicas.iter().chain(&report.calibration) {
        eprintln!("replica {} (seed {}): {:.3} s", r.index, r.seed, r.seconds);
    }
    eprintln!("{} files written to {} in {:.3} s", written.len(), opts.out.display(), report.seconds);
    for v in report.verdicts.iter().filter(|v| !v.passed) {
        let at = v.t.map(|t| format!(" at t={t}")).unwrap_or_default();
        eprintln!("FAIL {}{at}: {} against {}", v.check, v.statistic, v.threshold);
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, opts) = match &cli.command {
        Command::Simulate(o) => (Mode::Simulate, o),
        Command::Couple(o) => (Mode::Couple, o),
        Command::Verify(o) => (Mode::Verify, o),
        Command::W1(o) => (Mode::W1, o),
        Command::Bounds(o) => (Mode::Bounds, o),
    };
    match run(mode, opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
