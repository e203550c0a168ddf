use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regime_vi::cli;
use regime_vi::config::{parse_config, Config};
use regime_vi::error::Result;

#[derive(Parser)]
#[command(
    name = "regime-vi",
    about = "Variational inference for clusterwise linear regression: simulate, fit, predict, backtest, report"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset and write it with its ground truth
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(short = 'T', long = "observations")]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the variational posterior to a dataset CSV
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the next output for one input vector
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        posterior: PathBuf,
        /// Comma-separated input values, e.g. "0.1,-0.3,0.2,1"
        #[arg(long)]
        x: String,
    },
    /// Rolling fit/predict evaluation over three daily closing series
    Backtest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        spx: PathBuf,
        #[arg(long)]
        agg: PathBuf,
        #[arg(long)]
        jpy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the cluster tables for a stored posterior
    Report {
        #[arg(long)]
        posterior: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(Config::defaults()),
    }
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Simulate {
            config,
            out,
            t,
            seed,
        } => {
            let cfg = load_config(&config)?;
            cli::run_simulate(&cfg, &out, t, seed)?;
            println!("wrote dataset.csv and truth.json to {}", out.display());
        }
        Command::Fit { config, data, out } => {
            let cfg = load_config(&config)?;
            cli::run_fit(&cfg, &data, &out)?;
            println!(
                "wrote posterior.json, elbo_trace.csv, report.txt to {}",
                out.display()
            );
        }
        Command::Predict {
            config,
            posterior,
            x,
        } => {
            let cfg = load_config(&config)?;
            let values: std::result::Result<Vec<f64>, _> =
                x.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| regime_vi::Error::InvalidValue {
                field: "x".to_string(),
                reason: e.to_string(),
            })?;
            println!("{}", cli::run_predict(&cfg, &posterior, &values)?);
        }
        Command::Backtest {
            config,
            spx,
            agg,
            jpy,
            out,
        } => {
            let cfg = load_config(&config)?;
            let result = cli::run_backtest(&cfg, &spx, &agg, &jpy, &out)?;
            println!(
                "backtest over {} dates: r = {:.4}, R^2 = {:.4}, p = {:.4} ({} failed dates)",
                result.dates.len(),
                result.metrics.pearson_r,
                result.metrics.r_squared,
                result.metrics.p_value,
                result.failed_dates
            );
        }
        Command::Report { posterior } => {
            print!("{}", cli::run_report(&posterior)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
