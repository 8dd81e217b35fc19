use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use herding_cli::run::{cmd_run, load_config, Format, RunOptions};
use herding_cli::verify::{cmd_verify, parse_checks, VerifyOptions};
use herding_core::model::{ControlMode, JacobianMode, ScenarioConfig};

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_HERDED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "herd", version, about = "Multi-robot herding with backstepping control barrier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trajectory and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// centralized | decentralized
        #[arg(long)]
        mode: Option<ControlMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-max")]
        t_max: Option<f64>,
        #[arg(long = "out-dir", default_value = "out")]
        out_dir: PathBuf,
        /// csv | json | both
        #[arg(long, default_value = "both")]
        format: Format,
    },
    /// Run the numerical verification suites.
    Verify {
        /// Comma-separated: jacobian, sontag, qp, invariance, all
        #[arg(long, default_value = "all")]
        checks: String,
        /// Overrides every check's default trial count.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario used as the base for the invariance runs; defaults to the built-in scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        /// exact_per_herder | paper_literal
        #[arg(long = "jacobian-mode")]
        jacobian_mode: Option<JacobianMode>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            mode,
            seed,
            dt,
            t_max,
            out_dir,
            format,
        } => {
            let opts = RunOptions {
                config,
                mode,
                seed,
                dt,
                t_max,
                out_dir,
                format,
            };
            match cmd_run(&opts) {
                Ok(report) => {
                    let a = &report.artifacts;
                    for path in [&a.trajectory_csv, &a.metrics_json].into_iter().flatten() {
                        println!("wrote {}", path.display());
                    }
                    println!("wrote {}", a.config_echo.display());
                    println!("success: {}", report.success);
                    if report.success {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_NOT_HERDED)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_ERROR)
                }
            }
        }
        Command::Verify {
            checks,
            trials,
            seed,
            config,
            jacobian_mode,
        } => {
            let checks = match parse_checks(&checks) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ERROR);
                }
            };
            let mut base = match config.as_deref().map(load_config) {
                None => ScenarioConfig::default_scenario(),
                Some(Ok(cfg)) => cfg,
                Some(Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ERROR);
                }
            };
            if let Some(mode) = jacobian_mode {
                base.jacobian_mode = mode;
            }
            let reports = cmd_verify(&VerifyOptions {
                checks,
                trials,
                seed,
                base,
            });
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
    }
}
