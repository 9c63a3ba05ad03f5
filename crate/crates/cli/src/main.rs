use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginlab_core::autodiff::OpKind;
use marginlab_core::data::SeededDataset;
use marginlab_core::experiment::sweep::{run_sweep, SweepGrid};
use marginlab_core::experiment::{run_to_dir, ExperimentConfig, SEED_ENV};
use marginlab_core::{verify, Error};

/// Margin-maximizing GAN and classifier experiments.
#[derive(Parser)]
#[command(name = "marginlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics and models to a directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a grid; finished cells are skipped on rerun.
    Sweep {
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the oracle and property checks and print a pass/fail table.
    Verify {
        #[arg(long)]
        group: Option<String>,
        /// Corrupt one derivative rule to confirm the checks catch it.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a labelled dataset as CSV. `spec` is a JSON file or inline JSON.
    ExportDataset {
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. } | Error::Json(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::InvalidConfig {
        field: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn run(config: &Path, out: &Path) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_json(&read_text(config)?)?;
    cfg.override_seed(std::env::var(SEED_ENV).ok().as_deref())?;
    let record = run_to_dir(&cfg, out)?;
    if let Some(last) = record.last() {
        println!("{} iterations, final critic loss {}", last.iter, last.critic_loss);
    }
    Ok(())
}

fn sweep(grid: &Path, out: &Path, jobs: usize) -> Result<bool, Error> {
    let grid = SweepGrid::from_json(&read_text(grid)?)?;
    let report = run_sweep(&grid, out, jobs)?;
    for (cell, msg) in &report.failed {
        eprintln!("cell {cell} failed: {msg}");
    }
    println!(
        "{} cells, {} failed; summary at {}",
        report.cells,
        report.failed.len(),
        report.summary.display()
    );
    Ok(report.failed.is_empty())
}

fn verify_cmd(group: Option<&str>, fault: Option<&str>) -> ExitCode {
    let fault = match fault.map(|name| OpKind::from_name(name).ok_or(name)) {
        Some(Err(name)) => {
            eprintln!("error: unknown op `{name}`");
            return ExitCode::from(2);
        }
        Some(Ok(op)) => Some(op),
        None => None,
    };
    let Some(report) = verify::run_with_fault(group, fault) else {
        eprintln!("error: unknown group; expected one of {}", verify::GROUPS.join(", "));
        return ExitCode::from(2);
    };
    print!("{}", report.table());
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn export_dataset(spec: &str, out: &Path) -> Result<(), Error> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        read_text(Path::new(spec))?
    };
    let seeded = SeededDataset::from_json(&text)?;
    let data = seeded.dataset.generate(seeded.seed)?;
    fs::write(out, data.to_csv())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, &out).map(|()| true),
        Command::Sweep { grid, out, jobs } => sweep(&grid, &out, jobs),
        Command::Verify { group, inject_fault } => return verify_cmd(group.as_deref(), inject_fault.as_deref()),
        Command::ExportDataset { spec, out } => export_dataset(&spec, &out).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => fail(e),
    }
}
