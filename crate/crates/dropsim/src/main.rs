use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dropsim::cases;
use dropsim::config::SimulationConfig;
use dropsim::runner::{self, RunSummary};
use dropsim::AppResult;

/// Boundary-integral simulation of surfactant-covered drops in Stokes flow.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a validation case and print its table; `all` runs every case.
    Validate {
        case: String,
        /// Override the case's default spectral order.
        #[arg(long)]
        p: Option<usize>,
    },
    /// Continue a run from a checkpoint, appending to its output directory.
    Resume { checkpoint: PathBuf },
}

fn print_summary(s: &RunSummary) {
    println!(
        "t = {:.6}  accepted {}  rejected {}  Stokes evaluations {}{}",
        s.t,
        s.stats.accepted,
        s.stats.rejected,
        s.stats.stokes_evaluations,
        if s.steady { "  (steady)" } else { "" }
    );
    for (i, d) in s.last.iter().enumerate() {
        println!("drop {i}: D = {:.6}  volume {:.10}  area {:.10}  mass {:.10}", d.deformation, d.volume, d.area, d.mass);
    }
    println!("volume error {:.3e}  mass error {:.3e}", s.volume_error(), s.mass_error());
    if let Some(g) = s.min_gap {
        println!("minimum gap {g:.6}");
    }
    println!("output in {}", s.out_dir.display());
}

fn run(cli: Cli) -> AppResult<bool> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = SimulationConfig::load(&config)?;
            print_summary(&runner::simulate(&cfg, &out)?);
            Ok(true)
        }
        Command::Resume { checkpoint } => {
            print_summary(&runner::resume(&checkpoint)?);
            Ok(true)
        }
        Command::Validate { case, p } => {
            let names: Vec<&str> = if case == "all" { cases::CASES.to_vec() } else { vec![case.as_str()] };
            let mut ok = true;
            for name in names {
                let rep = cases::run_case(name, p)?;
                println!("{rep}\n");
                ok &= rep.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("DROPSIM_THREADS").ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
