//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dgnnflow::model::Aggregation;
use dgnnflow::sim::Rational;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "dgnnflow",
    version,
    about = "Synthetic events, reference and simulated GNN inference, latency statistics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event dataset (and optionally random weights).
    Generate(GenerateArgs),
    /// Run inference over a dataset and write one CSV row per event.
    Infer(InferArgs),
    /// Compare the met columns of two inference CSVs.
    Compare(CompareArgs),
    /// Latency statistics by node and edge count from a sim-engine CSV.
    Stats(StatsArgs),
    /// Re-run a command from its manifest and check the output checksums.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Reference,
    Sim,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub min_particles: usize,
    #[arg(long, default_value_t = 128)]
    pub max_particles: usize,
    /// Event file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write random model weights drawn from the same seed.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Event file.
    #[arg(long, visible_alias = "dataset")]
    pub events: PathBuf,
    /// Weights file.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub delta: f64,
    /// Measure phi differences on the circle.
    #[arg(long)]
    pub wrap_phi: bool,
    #[arg(long, default_value_t = Aggregation::Max)]
    pub mode: Aggregation,
    #[arg(long, value_enum, default_value_t = Engine::Reference)]
    pub engine: Engine,
    #[arg(long)]
    pub p_edge: Option<usize>,
    #[arg(long)]
    pub p_node: Option<usize>,
    #[arg(long)]
    pub fifo_depth: Option<usize>,
    #[arg(long)]
    pub mlp_latency: Option<u64>,
    #[arg(long)]
    pub clock_hz: Option<u64>,
    /// Host transfer cost as `num/den` cycles per byte.
    #[arg(long, value_parser = parse_rational)]
    pub transfer_cycles_per_byte: Option<Rational>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Trace dump for the sim engine.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl InferArgs {
    /// Flags that only make sense with `--engine sim`.
    pub fn sim_flags_given(&self) -> Vec<&'static str> {
        let flags = [
            ("--p-edge", self.p_edge.is_some()),
            ("--p-node", self.p_node.is_some()),
            ("--fifo-depth", self.fifo_depth.is_some()),
            ("--mlp-latency", self.mlp_latency.is_some()),
            ("--clock-hz", self.clock_hz.is_some()),
            ("--transfer-cycles-per-byte", self.transfer_cycles_per_byte.is_some()),
            ("--trace", self.trace.is_some()),
        ];
        flags.into_iter().filter(|(_, given)| *given).map(|(name, _)| name).collect()
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Sim-engine inference CSV.
    pub input: PathBuf,
    /// Lower bounds of the node-count buckets.
    #[arg(long, default_value = "0,16,32,64,96")]
    pub node_buckets: String,
    /// Lower bounds of the edge-count buckets.
    #[arg(long, default_value = "0,16,64,256,1024")]
    pub edge_buckets: String,
    /// Fixed per-batch overhead shared by the graphs of a batch, seconds.
    #[arg(long, default_value_t = 100e-6)]
    pub batch_overhead_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write the replayed outputs here (same file names) instead of over
    /// the recorded paths.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let num = num.parse::<u64>().map_err(|e| format!("bad numerator `{num}`: {e}"))?;
    let den = den.parse::<u64>().map_err(|e| format!("bad denominator `{den}`: {e}"))?;
    if den == 0 {
        return Err("denominator must be positive".into());
    }
    Ok(Rational { num, den })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals() {
        assert_eq!(parse_rational("3/4"), Ok(Rational { num: 3, den: 4 }));
        assert_eq!(parse_rational("2"), Ok(Rational { num: 2, den: 1 }));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
