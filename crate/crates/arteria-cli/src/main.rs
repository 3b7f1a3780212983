//! `arteria` binary: validate configurations, run simulations, and execute
//! convergence, stability, and windkessel-comparison studies.

use arteria_cli::{
    cmd_check, cmd_compare_windkessel, cmd_converge, cmd_run, cmd_stability, parse_levels_flag,
    parse_probe_flag, write_atomic, CliError, Overrides, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE,
    EXIT_VALIDATION,
};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "arteria",
    about = "Solver for quasilinear hyperbolic systems on 1D networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate topology and the solvability conditions at t = 0
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run a simulation and write probe CSV, diagnostics log, and summary
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        /// Probe BRANCH:X, repeatable
        #[arg(long = "probe")]
        probes: Vec<String>,
    },
    /// Convergence study against a manufactured or oracle reference
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Continuous-dependence probe across a perturbation ladder
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Compare the centered and explicit windkessel closures
    CompareWindkessel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
    },
}

fn write_report(out: &Option<PathBuf>, name: &str, json: &str) -> Result<(), CliError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        write_atomic(&dir.join(name), &format!("{json}\n"))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::Check { config, sigma, dt } => {
            let ov = Overrides {
                sigma,
                dt,
                ..Default::default()
            };
            let out = cmd_check(&config, &ov)?;
            print!("{}", out.report);
            Ok(if out.ok { EXIT_OK } else { EXIT_VALIDATION })
        }
        Cmd::Run {
            config,
            out,
            horizon,
            sigma,
            dt,
            stride,
            probes,
        } => {
            let probes = probes
                .iter()
                .map(|p| parse_probe_flag(p))
                .collect::<Result<Vec<_>, _>>()?;
            let ov = Overrides {
                horizon,
                sigma,
                dt,
                stride,
                probes,
                levels: None,
            };
            let artifacts = cmd_run(&config, &out, &ov)?;
            println!(
                "{}: {} steps to t = {}, outputs in {}",
                artifacts.summary.status,
                artifacts.summary.steps,
                artifacts.summary.final_time,
                artifacts.out_dir.display()
            );
            Ok(if artifacts.summary.status == "completed" {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            })
        }
        Cmd::Converge {
            config,
            out,
            levels,
            horizon,
            sigma,
        } => {
            let levels = levels.as_deref().map(parse_levels_flag).transpose()?;
            let ov = Overrides {
                horizon,
                sigma,
                levels,
                ..Default::default()
            };
            let report = cmd_converge(&config, &ov)?;
            print!("{}", report.table);
            write_report(&out, "convergence.json", &report.json)?;
            Ok(if report.passed {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            })
        }
        Cmd::Stability {
            config,
            out,
            horizon,
            sigma,
            dt,
        } => {
            let ov = Overrides {
                horizon,
                sigma,
                dt,
                ..Default::default()
            };
            let report = cmd_stability(&config, &ov)?;
            print!("{}", report.table);
            write_report(&out, "stability.json", &report.json)?;
            Ok(if report.passed {
                EXIT_OK
            } else {
                EXIT_VALIDATION
            })
        }
        Cmd::CompareWindkessel {
            config,
            out,
            levels,
            horizon,
            sigma,
        } => {
            let levels = levels.as_deref().map(parse_levels_flag).transpose()?;
            let ov = Overrides {
                horizon,
                sigma,
                levels,
                ..Default::default()
            };
            let report = cmd_compare_windkessel(&config, &ov)?;
            print!("{}", report.table);
            write_report(&out, "windkessel_comparison.json", &report.json)?;
            // exploratory: no pass/fail gate
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
