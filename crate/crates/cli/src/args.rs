//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use alphami::info_measures::Alpha;

/// Output directory used when neither `--out-dir` nor the environment sets one.
pub const DEFAULT_OUT_DIR: &str = "alphami-out";
pub const OUT_DIR_ENV: &str = "ALPHAMI_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "alphami",
    version,
    about = "Alpha-MI privacy measures, channel optimization and adversarial release training"
)]
pub struct Cli {
    /// Directory for result files (created when missing).
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rényi entropy, Arimoto conditional entropy and α-MI of a joint distribution.
    Measures(MeasuresArgs),
    /// Exact privatization channel for a discrete world model.
    Optimize(OptimizeArgs),
    /// Train one releaser/adversary pair and evaluate it on held-out data.
    Train(TrainArgs),
    /// Train and evaluate every (α, λ) grid point.
    Sweep(SweepArgs),
    /// Privacy-utility curves from a sweep results file.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct MeasuresArgs {
    /// Joint distribution JSON: `{"matrix": [[..], ..]}` with rows indexed by X,
    /// or `{"shape": [..], "probs": [..]}` where axis 0 is X and the rest form Z.
    #[arg(long, alias = "joint")]
    pub config: PathBuf,
    /// Orders to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha, default_value = "0.9,1,3")]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// World model JSON (`x`, `w`, `y`, optional `s`, `joint`, `distortion`).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha, default_value = "1")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_lambda, default_value = "1")]
    pub lambda_grid: Vec<f64>,
    /// Seed of the randomized channel initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Overrides shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct RunOverrides {
    /// Sweep config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Training seed (the data seed stays as configured).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Give the adversary and attacker the side information.
    #[arg(long)]
    pub si: bool,
    /// Train a utility network alongside the adversary.
    #[arg(long)]
    pub utility_net: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Defaults to the first configured order.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Defaults to the first configured λ.
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha)]
    pub alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_lambda)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Concurrent grid points; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Results JSON written by `sweep`.
    #[arg(long, alias = "results")]
    pub config: PathBuf,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("`{s}` is not a number"))?;
    Alpha::new(v).map(|a| a.value()).map_err(|e| e.to_string())
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("lambda must be finite and non-negative, got {s}"))
    }
}
