use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim::harness::{self, SweepAxis};
use fedsim::Error;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated optimization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of gamma or H.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Validate a config without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the theoretical bound for a config and measured constants.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "L")]
        l: f64,
        #[arg(long = "sigma-sq")]
        sigma_sq: f64,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(harness::exit_code(e) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = match harness::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            match harness::run_experiment(&cfg) {
                Ok(m) => {
                    println!("wrote {} rounds to {}", m.records.len(), m.path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let cfg = match harness::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let runs = match harness::sweep(&cfg, axis, &values) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            let mut worst = 0;
            for run in runs {
                match run.result {
                    Ok(m) => println!("{}: wrote {}", run.label, m.path.display()),
                    Err(e) => {
                        println!("{}: failed: {e}", run.label);
                        worst = worst.max(e.exit_code());
                    }
                }
            }
            ExitCode::from(worst as u8)
        }
        Command::Check { config } => match harness::load_config(&config) {
            Ok(cfg) => {
                println!(
                    "ok: {} K={} M={} eta={} T={}",
                    cfg.server.algorithm.name(),
                    cfg.server.clients,
                    cfg.server.active,
                    cfg.server.eta,
                    cfg.server.rounds
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Bounds {
            config,
            l,
            sigma_sq,
        } => {
            let report = harness::load_config(&config)
                .and_then(|cfg| harness::evaluate_bounds(&cfg, l, sigma_sq));
            match report {
                Ok(r) => {
                    println!("kind = {:?}", r.bound.kind);
                    println!("f0 = {:.16e}", r.f0);
                    println!("f_inf = {:.16e}", r.f_inf);
                    println!("f_gap = {:.16e}", r.bound.inputs.f_gap);
                    if let Some(c) = r.bound.c {
                        println!("C = {c:.16e}");
                    }
                    println!("bound = {:.16e}", r.bound.value);
                    println!("gamma_threshold = {:.16e}", r.stepsize_threshold);
                    println!("gamma_admissible = {}", r.stepsize_ok);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
