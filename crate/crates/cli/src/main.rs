//! `mdrr`: command-line front end for the randomized response library.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mdrr", version, about = "Multi-dimensional randomized response")]
pub struct Cli {
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, env = "MDRR_OUT_DIR", default_value = ".")]
    pub out: PathBuf,

    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a CSV and write the normalized data set, its schema and a report.
    Ingest(DataArgs),
    /// Randomize records and write the randomized CSV.
    Randomize {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mech: MechanismArgs,
    },
    /// Write per-block distribution estimates.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mech: MechanismArgs,
        /// Treat the input as already randomized responses.
        #[arg(long)]
        randomized: bool,
        /// Partition file the input was randomized with (default: singletons).
        #[arg(long, requires = "randomized")]
        partition: Option<PathBuf>,
        /// Confidence level of the reported error bounds.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Write the dependence matrix and the attribute partition.
    Cluster {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mech: MechanismArgs,
    },
    /// Randomize, then reweight records toward the estimated marginals.
    Adjust {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mech: MechanismArgs,
        #[arg(long, default_value_t = 1e-9)]
        delta: f64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Median count-query errors over repeated runs, as a TSV table.
    Experiment(ExperimentArgs),
    /// Tabulate sqrt(B) against the number of categories.
    #[command(name = "curve-sqrtb", alias = "curve-sqrtB")]
    CurveSqrtb {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        r_min: usize,
        #[arg(long, default_value_t = 1_000_000)]
        r_max: usize,
        #[arg(long, default_value_t = 10)]
        per_decade: usize,
    },
    /// Re-run the command recorded in a manifest and compare artifact hashes.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Schema spec (column kinds, bins, category lists).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Concatenate the data set this many times after loading.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MechanismArgs {
    /// independent, joint, clusters or randomized.
    #[arg(long, default_value = "independent")]
    pub method: String,
    /// Keep probability of every attribute.
    #[arg(long, conflicts_with = "epsilon")]
    pub p: Option<f64>,
    /// Per-attribute epsilon, instead of a keep probability.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Cap on joint categories per cluster.
    #[arg(long, default_value_t = 50)]
    pub tv: u128,
    /// Minimum dependence for merging clusters.
    #[arg(long, default_value_t = 0.1)]
    pub td: f64,
    /// plaintext-oracle, rr-per-attribute, secure-bivariate or rr-per-pair.
    #[arg(long, default_value = "plaintext-oracle")]
    pub dependence: String,
    /// Largest joint domain randomized as one block.
    #[arg(long, default_value_t = mdrr::pipeline::DEFAULT_JOINT_CAP)]
    pub joint_cap: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated methods; `name+adjustment` adds reweighting.
    #[arg(long, value_delimiter = ',', default_value = "independent")]
    pub method: Vec<String>,
    /// Apply reweighting to every method except the randomized baseline.
    #[arg(long)]
    pub adjust: bool,
    /// Keep probabilities, one table block each (default 0.7).
    #[arg(long, value_delimiter = ',', conflicts_with = "epsilon")]
    pub p: Vec<f64>,
    /// Per-attribute epsilons, instead of keep probabilities.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    /// Cluster size caps; crossed with `--td` for clusters entries.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub tv: Vec<u128>,
    /// Cluster dependence floors.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub td: Vec<f64>,
    /// Query coverages.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub sigma: Vec<f64>,
    /// Repetitions per configuration; medians are taken over them.
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    /// Attributes per query.
    #[arg(long, default_value_t = 2)]
    pub query_attributes: usize,
    /// Dependence source for clustering.
    #[arg(long, default_value = "plaintext-oracle")]
    pub dependence: String,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::dispatch(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
