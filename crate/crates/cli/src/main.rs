//! Command-line front end: dataset ingestion, whitening preprocessor,
//! and the fit / test / influence / constants / simulate subcommands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use mslca_cli::data::{load_csv, whiten, DataError, WhitenTag};
use mslca::blocks::{BlockStructure, ScatterMatrix};
use mslca::elliptical::{compute_constants, EllipticalModel};
use mslca::influence::{batch_diagnostics, IfContext};
use mslca::mslca::{classical_fit, robust_fit, McdOptions, sample_covariance};
use mslca::noncorr::run_test;
use mslca::sim::{size_power, ContaminationMode, ContaminationSpec};

#[derive(Parser)]
#[command(
    name = "mslca",
    about = "Multiple-set linear canonical analysis with classical and robust (MCD) estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Classical,
    Mcd,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the canonical analysis and print the coefficients and directions as JSON
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// One block label per CSV column, e.g. 1,1,2,2
        #[arg(long)]
        blocks: String,
        #[arg(long, value_enum, default_value = "mcd")]
        estimator: EstimatorArg,
        /// MCD coverage fraction
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        #[arg(long, default_value_t = 500)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Whiten each block by its estimated scatter before fitting
        #[arg(long)]
        whiten: bool,
        /// Write the JSON here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Robust test for mutual non-correlation of the blocks
    Test {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        blocks: String,
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        #[arg(long, default_value_t = 500)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        whiten: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-observation influence diagnostics (CSV); input is whitened automatically
    Influence {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        blocks: String,
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        /// Canonical coefficient index (0-based) for the per-row IF value
        #[arg(long, default_value_t = 0)]
        coefficient: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the robust model constants for the given dimension and coverage
    Constants {
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        /// Radial generator family (only gaussian is built in)
        #[arg(long, default_value = "gaussian")]
        family: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Size/power experiment for the non-correlation test
    Simulate {
        /// Block sizes of the simulated model, e.g. 2,2,2
        #[arg(long)]
        blocks: String,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        replicates: usize,
        #[arg(long, default_value_t = 0.75)]
        gamma: f64,
        /// Fraction of rows replaced by a fixed outlier
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Value of every coordinate of the outlier point
        #[arg(long, default_value_t = 8.0)]
        outlier: f64,
        #[arg(long, default_value_t = 40)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<&PathBuf>, body: &str) -> Result<(), DataError> {
    match output {
        Some(path) => std::fs::write(path, body).map_err(DataError::Io),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn parse_dims(spec: &str) -> Result<BlockStructure, DataError> {
    let dims: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| DataError::BadBlockSpec(spec.to_string()))?;
    BlockStructure::new(dims).map_err(DataError::Core)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Fit { input, blocks, estimator, gamma, restarts, seed, whiten: do_whiten, output } => {
            let ds = load_csv(&input, &blocks)?;
            let rows = if do_whiten {
                let tag = match estimator {
                    EstimatorArg::Classical => WhitenTag::Classical,
                    EstimatorArg::Mcd => WhitenTag::Mcd,
                };
                whiten(&ds.rows, &ds.structure, tag, gamma, seed)?.0
            } else {
                ds.rows
            };
            let fit = match estimator {
                EstimatorArg::Classical => classical_fit(&rows, &ds.structure)?,
                EstimatorArg::Mcd => {
                    let opts = McdOptions { restarts, seed, h: None };
                    robust_fit(&rows, &ds.structure, gamma, &opts)?
                }
            };
            emit(output.as_ref(), &serde_json::to_string_pretty(&fit.summary())?)?;
        }
        Command::Test { input, blocks, gamma, restarts, seed, whiten: do_whiten, output } => {
            let ds = load_csv(&input, &blocks)?;
            let rows = if do_whiten {
                whiten(&ds.rows, &ds.structure, WhitenTag::Mcd, gamma, seed)?.0
            } else {
                ds.rows
            };
            let opts = McdOptions { restarts, seed, h: None };
            let result = run_test(&rows, &ds.structure, gamma, &opts, None)?;
            emit(output.as_ref(), &serde_json::to_string_pretty(&result.summary())?)?;
        }
        Command::Influence { input, blocks, gamma, coefficient, seed, output } => {
            let ds = load_csv(&input, &blocks)?;
            // the influence formulas assume identity diagonal blocks, so
            // whitening is not optional here
            eprintln!("note: whitening each block by its sample scatter (required for influence analysis)");
            let (rows, _) = whiten(&ds.rows, &ds.structure, WhitenTag::Classical, gamma, seed)?;
            let v = ScatterMatrix::new(sample_covariance(&rows), ds.structure.clone())?;
            let model = EllipticalModel::gaussian(ScatterMatrix::identity(ds.structure.clone()))?;
            let constants = compute_constants(gamma, &model)?;
            let ctx = IfContext::new(v, Some(constants))?;
            let diags = batch_diagnostics(&rows, &ctx, coefficient)?;
            let mut body = String::from("row,if_t_robust_norm,if_rho,inside\n");
            for d in &diags {
                body.push_str(&format!(
                    "{},{:.16e},{:.16e},{}\n",
                    d.row, d.if_t_robust_norm, d.if_rho, d.inside
                ));
            }
            match output {
                Some(path) => std::fs::write(path, body)?,
                None => print!("{body}"),
            }
        }
        Command::Constants { q, gamma, family, output } => {
            if family != "gaussian" {
                return Err(Box::new(DataError::BadBlockSpec(format!(
                    "unsupported generator family '{family}'; only gaussian is built in"
                ))));
            }
            if q < 2 {
                return Err(Box::new(DataError::BadBlockSpec(
                    "constants need dimension q >= 2".into(),
                )));
            }
            // constants depend only on q, not on the block split
            let bs = BlockStructure::new(vec![1, q - 1])?;
            let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs))?;
            let constants = compute_constants(gamma, &model)?;
            emit(output.as_ref(), &serde_json::to_string_pretty(&constants)?)?;
        }
        Command::Simulate { blocks, n, replicates, gamma, eps, outlier, restarts, seed, output } => {
            let bs = parse_dims(&blocks)?;
            let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone()))?;
            let spec = if eps > 0.0 {
                Some(ContaminationSpec::new(
                    eps,
                    ContaminationMode::PointMass {
                        x0: DVector::from_element(bs.q(), outlier),
                    },
                    seed ^ 0xc0ffee,
                )?)
            } else {
                None
            };
            let report = size_power(&model, &bs, gamma, n, replicates, spec.as_ref(), restarts, seed)?;
            emit(output.as_ref(), &serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors by itself
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
