use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use smallball_lab::{run_experiment, write_outputs, ExperimentConfig, ExperimentKind};

/// Runs one small-ball experiment and writes its tables and checks.
#[derive(Debug, Parser)]
#[command(name = "smallball-lab", version)]
struct Cli {
    experiment: ExperimentKind,
    /// JSON config; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable the data-parallel kernels.
    #[arg(long)]
    sequential: bool,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::new(cli.experiment),
    };
    if let Some(k) = cfg.experiment {
        if k != cli.experiment {
            anyhow::bail!(
                "config field `experiment`: config names {} but the command line asks for {}",
                k.name(),
                cli.experiment.name()
            );
        }
    }
    cfg.experiment = Some(cli.experiment);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.sequential {
        cfg.sequential = true;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cli.experiment.name()));
    cfg.out_dir = Some(out.clone());
    let resolved = cfg.clone().resolve()?;
    let report = run_experiment(&resolved)?;
    write_outputs(&report, &resolved, &out)?;
    for c in &report.checks {
        println!("[{}] {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    println!("wrote {} ({:.1} s)", out.display(), report.wall_clock_s);
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
