use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "keeprate",
    version,
    about = "Search, cost and analyze vision-token keeping-rate schedules"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedy per-layer search for the smallest rates that keep performance.
    Gsearch(GsearchArgs),
    /// Sigmoid schedule at a fixed budget, optionally searching its steepness.
    Psigmoid(PsigmoidArgs),
    /// Prefill FLOPs and KV-cache memory of a schedule.
    Cost(CostArgs),
    /// Kendall's tau between layer rankings of an attention trace.
    Tau(TauArgs),
    /// Run a schedule through a synthetic oracle.
    Simulate(SimulateArgs),
    /// Fit sigmoid parameters to a schedule.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Seed for randomized search steps.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Primary output file; stdout when omitted. Secondary files are written
    /// next to it as <stem>.<kind>.<ext>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GsearchArgs {
    /// Oracle spec JSON.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Expected layer count; must match the oracle.
    #[arg(long)]
    pub layers: Option<u32>,
    /// Points in the rate grid over [0, 1]. Grids above 32 points use BO.
    #[arg(long, default_value_t = 21)]
    pub grid: u32,
    #[arg(long, default_value_t = 3)]
    pub stride: u32,
    /// Penalty per unit of keeping rate.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 15)]
    pub bo_iters: u32,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PsigmoidArgs {
    /// Mean keeping rate over layers 3..L.
    #[arg(long)]
    pub budget: f64,
    /// Steepness to evaluate.
    #[arg(long, conflicts_with = "search_k")]
    pub k: Option<f64>,
    /// Search the steepness against --oracle.
    #[arg(long)]
    pub search_k: bool,
    #[arg(long)]
    pub layers: Option<u32>,
    /// Oracle spec JSON; required with --search-k.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub bo_iters: u32,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CostArgs {
    /// Model dims JSON; LLaVA-1.5-7B-like dims when omitted.
    #[arg(long)]
    pub dims: Option<PathBuf>,
    /// Schedule JSON.
    #[arg(long)]
    pub schedule: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TauArgs {
    /// Trace JSON.
    #[arg(long)]
    pub trace: PathBuf,
    /// Emit the full pairwise matrix instead of adjacent pairs.
    #[arg(long)]
    pub matrix: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Oracle spec JSON.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Schedule JSON; the full schedule when omitted.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Schedule JSON.
    #[arg(long)]
    pub schedule: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}
