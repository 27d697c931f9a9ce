//! Runs refinement studies and stability diagnostics.
//!
//! Options come from built-in defaults, then an optional `--config` file of
//! `key = value` lines, then command-line flags (highest precedence).
//!
//! Outputs: the CSV table at `--out` (columns
//! `h_max,vel_h1_error,vel_rate,pres_l2_error,pres_rate`, last row `mean`)
//! plus `<stem>_velocity.dat` and `<stem>_pressure.dat`, two-column
//! `h error` files for log-log plots. `--dump-mesh` writes one element per
//! line (`id x0 y0 x1 y1 ...`, counterclockwise); with several levels the
//! level index is appended to the file stem.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use cutstokes::{run_diagnostics, run_study, Error, StudyConfig};
use log::error;

#[derive(Debug, Parser)]
#[command(
    name = "cutstokes",
    version,
    about = "Interior-penalty dG Stokes convergence studies on level-set domains"
)]
struct Args {
    /// `square` or `disc`.
    #[arg(long)]
    domain: Option<String>,
    /// Velocity degree p (pressure degree p - 1).
    #[arg(long)]
    order: Option<usize>,
    /// Number of refinement levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Coarsest covering-mesh size (default 0.25 for the square, 0.625 r for the disc).
    #[arg(long)]
    h0: Option<f64>,
    /// Penalty constant C in sigma = C p^2 / h_F.
    #[arg(long)]
    sigma_const: Option<f64>,
    /// Volume and facet quadrature degree (default 2p + 2).
    #[arg(long)]
    quad_degree: Option<usize>,
    /// Gauss pieces per curved boundary facet.
    #[arg(long)]
    curved_subdivisions: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the randomized diagnostics.
    #[arg(long)]
    seed: Option<u64>,
    /// Run the stability and quadrature diagnostics instead of a study.
    #[arg(long)]
    diagnostics: bool,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the active mesh polygons.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Write the bordered system as `row col value` triplets followed by the right-hand side.
    #[arg(long)]
    dump_system: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn build_config(args: &Args) -> anyhow::Result<StudyConfig> {
    let mut config = match &args.config {
        Some(path) => {
            StudyConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => StudyConfig::default(),
    };
    if let Some(v) = &args.domain {
        config.domain = v.clone();
    }
    if let Some(v) = args.order {
        config.order = v;
    }
    if let Some(v) = args.levels {
        config.levels = v;
    }
    if let Some(v) = args.h0 {
        config.h0 = Some(v);
    }
    if let Some(v) = args.sigma_const {
        config.sigma_const = v;
    }
    if let Some(v) = args.quad_degree {
        config.quad_degree = Some(v);
    }
    if let Some(v) = args.curved_subdivisions {
        config.curved_subdivisions = Some(v);
    }
    if let Some(v) = &args.out {
        config.out = v.clone();
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.dump_mesh {
        config.dump_mesh = Some(v.clone());
    }
    if let Some(v) = &args.dump_system {
        config.dump_system = Some(v.clone());
    }
    config.validate()?;
    Ok(config)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::UnknownProblem(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            error!("{e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    if args.diagnostics {
        return match run_diagnostics(&config) {
            Ok(report) => {
                print!("{}", report.render());
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_NUMERICAL)
                }
            }
            Err(e) => {
                error!("{e}");
                ExitCode::from(exit_code(&e))
            }
        };
    }

    match run_study(&config) {
        Ok(outcome) => {
            print!("{}", cutstokes::study::render_csv(&outcome.table));
            match outcome.failure {
                None => ExitCode::SUCCESS,
                Some((level, e)) => {
                    error!("study stopped at level {level}: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
