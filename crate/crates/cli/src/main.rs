use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod error;
mod mnist;
mod predict;
mod sweep;

use config::{RunConfig, SlopeConfig};
use error::CliError;

const AFTER_HELP: &str = "\
Presets: fig1 (isotropic sweeps), fig2 (power-law sweeps), fig3 (over-parametrized
generators, shared and independent designs), fig4 (MNIST kernel ridge curves).

Environment:
  COLLAPSE_LAB_DATA  dataset root; MNIST IDX files are read from $COLLAPSE_LAB_DATA/mnist

Exit codes:
  0  success
  1  internal error
  2  invalid configuration or arguments
  3  theory domain error (divergent or inapplicable closed form)
  4  missing or unreadable data";

/// Model collapse laboratory: closed-form predictions and Monte Carlo
/// experiments for ridge regression trained on recursively generated data.
#[derive(Debug, Parser)]
#[command(name = "collapse-lab", version, after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (fig1, fig2, fig3, fig4)
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Override the seed; run i of a multi-run section uses SEED + i
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Cap the number of worker threads
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output file (CSV for sweep and mnist, JSON for the others)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print theory predictions from the `predict` and `scaling` sections
    Predict {
        /// Print JSON instead of the text summary
        #[arg(long)]
        json: bool,
    },
    /// Run the `sweep` section and write one record per cell and replicate
    Sweep,
    /// Run the `mnist` section: kernel ridge collapse curves
    Mnist,
    /// Fit the log-log slope of a measured curve in a sweep CSV
    Slope {
        /// Sweep CSV (overrides `slope.input`)
        input: Option<PathBuf>,
        /// Generation count of the curve
        #[arg(long)]
        n: Option<usize>,
        /// Fixed ridge strength of the curve
        #[arg(long)]
        lambda: Option<f64>,
        /// Ridge exponent of the curve
        #[arg(long)]
        ell: Option<f64>,
        /// Smallest T included in the fit
        #[arg(long)]
        t_min: Option<f64>,
        /// Largest T included in the fit
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Score a sweep CSV against its theory columns
    Compare {
        /// Sweep CSV
        input: PathBuf,
    },
}

impl Cli {
    fn config(&self) -> Result<Option<RunConfig>, CliError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).map(Some),
            (None, Some(name)) => RunConfig::preset(name).map(Some),
            (None, None) => Ok(None),
        }
    }

    fn require_config(&self) -> Result<RunConfig, CliError> {
        self.config()?
            .ok_or_else(|| CliError::Config("pass --config PATH or --preset NAME".into()))
    }

    fn default_out(&self, command: &str) -> PathBuf {
        let name = self.preset.as_deref().unwrap_or(command);
        PathBuf::from("runs").join(format!("{name}.csv"))
    }
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    sweep::ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Predict { json } => {
            let report = predict::predict(&cli.require_config()?)?;
            if *json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", predict::render(&report));
            }
            if let Some(path) = &cli.out {
                write_json(path, &report)?;
            }
        }
        Command::Sweep => {
            sweep::sweep(
                &cli.require_config()?,
                cli.seed,
                cli.out.clone(),
                cli.default_out("sweep"),
            )?;
        }
        Command::Mnist => {
            mnist::mnist(
                &cli.require_config()?,
                cli.seed,
                cli.out.clone(),
                cli.default_out("mnist"),
            )?;
        }
        Command::Slope {
            input,
            n,
            lambda,
            ell,
            t_min,
            t_max,
        } => {
            let base = cli.config()?.and_then(|c| c.slope).unwrap_or_default();
            let sel = SlopeConfig {
                input: input.clone().or(base.input),
                n: n.or(base.n),
                lambda: lambda.or(base.lambda),
                ell: ell.or(base.ell),
                t_min: t_min.or(base.t_min),
                t_max: t_max.or(base.t_max),
            };
            let fit = sweep::slope(&sel)?;
            println!(
                "slope {:.4} ± {:.4} (intercept {:.4}) over T in [{}, {}], {} points",
                fit.slope, fit.stderr, fit.intercept, fit.t_min, fit.t_max, fit.points
            );
            if let Some(path) = &cli.out {
                write_json(path, &fit)?;
            }
        }
        Command::Compare { input } => {
            let report = sweep::compare_file(input)?;
            if let Some(path) = &cli.out {
                write_json(path, &report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
