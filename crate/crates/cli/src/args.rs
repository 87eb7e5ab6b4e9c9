use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use raff_core::{BuiltinModel, OutlierScale, Protocol};

/// Robust curve fitting with automatic outlier detection.
///
/// Observation indices are 0-based in every file and report.
#[derive(Parser, Debug)]
#[command(name = "raff", version)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv solver trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic instance with ground-truth outlier flags.
    Generate(GenerateArgs),
    /// Fit a dataset and write a JSON report.
    Fit(FitArgs),
    /// Score a fit report against an instance's outlier flags.
    Evaluate(EvaluateArgs),
    /// Run generate, fit and evaluate over many seeds.
    Bench(BenchArgs),
    /// Sample a fitted model as CSV for plotting.
    Curve(CurveArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InstanceArgs {
    /// linear, cubic, expon, logistic or circle.
    #[arg(long)]
    pub model: BuiltinModel,
    /// Number of observations.
    #[arg(long)]
    pub r: usize,
    /// Number of inliers.
    #[arg(long)]
    pub p: Option<usize>,
    /// uniform, cluster, circle-border or circle-uniform. Defaults to
    /// uniform for curves and circle-border for the circle.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Outlier deviation base: the point's own draw or the noise level.
    #[arg(long, default_value = "draw")]
    pub outlier_scale: OutlierScale,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, env = "RAFF_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Smallest trusted-point count tried. Defaults to ceil(r/2).
    #[arg(long)]
    pub pmin: Option<usize>,
    /// Largest trusted-point count tried. Defaults to r.
    #[arg(long)]
    pub pmax: Option<usize>,
    /// Multistart runs per trusted-point count.
    #[arg(long, default_value_t = 100)]
    pub starts: usize,
    /// Worker threads for the per-p tasks.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fixed voting tolerance instead of the automatic one.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Uniform start box LO:HI; each side is one value or one per parameter,
    /// comma separated. Starts are standard normal without it.
    #[arg(long, value_parser = parse_box)]
    pub start_box: Option<StartBox>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Instance or plain dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Required for plain datasets; instance files name their own model.
    #[arg(long)]
    pub model: Option<BuiltinModel>,
    #[arg(long, env = "RAFF_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Report path. Prints to stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// JSON report written by `fit`.
    #[arg(long)]
    pub report: PathBuf,
    /// Instance file holding the true outlier flags.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Number of instances, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, env = "RAFF_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Outlier ratios in percent for a circle sweep, e.g. 10,20,30.
    /// Replaces --p and prints relative errors against least squares.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<u32>,
    /// Per-instance CSV rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// JSON report written by `fit`.
    #[arg(long)]
    pub report: PathBuf,
    /// Sampling interval A:B for curve models.
    #[arg(long, value_parser = parse_range, default_value = "1:30")]
    pub range: (f64, f64),
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// CSV path. Prints to stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
        .collect()
}

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(format!("need finite A < B, got {a}:{b}"));
    }
    Ok((a, b))
}

fn parse_box(s: &str) -> Result<StartBox, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    Ok(StartBox {
        lower: parse_list(lo)?,
        upper: parse_list(hi)?,
    })
}
