//! `conflate`: compute conflated metrics from database snapshots, write
//! reports, run a ledger node and drive it.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 input that does not
//! parse or validate, 3 unknown entity, 4 node unreachable, 5 node error.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conflate_core::model::EntityKind;

pub const DEFAULT_NODE_URL: &str = "http://127.0.0.1:8000";

#[derive(Debug, Parser)]
#[command(name = "conflate", version, about, long_about = None)]
#[command(
    after_help = "Exit codes: 0 ok, 1 I/O or other failure, 2 parse or validation error, \
3 unknown entity, 4 node unreachable, 5 node reported an error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Conflate one entity across snapshots and write its entity CSV.
    Compute(ComputeArgs),
    /// Group summary CSV and mean/std-dev block over every entity.
    Report(ReportArgs),
    /// Recompute conflated totals from an entity CSV.
    Summarize(SummarizeArgs),
    /// Run a ledger node.
    Serve(ServeArgs),
    /// Post an entity CSV (or JSON entries) to a node.
    Post(PostArgs),
    /// Ask a node to mine its pending entries.
    Mine(NodeArgs),
    /// Ask a node to adopt the longest valid chain among its peers.
    Resync(NodeArgs),
    /// Register peers with a node, or list them when none are given.
    Peers(PeersArgs),
    /// Print a node's chain.
    Chain(ChainArgs),
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long, env = "CONFLATE_KIND")]
    pub kind: EntityKind,
    /// ORCID, organization name or ISSN depending on --kind.
    #[arg(long, env = "CONFLATE_ID")]
    pub id: String,
    /// Snapshot file, one per database.
    #[arg(long = "sources", required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    /// Where to write the entity CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the indicators as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Group,
    Kind,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "sources", required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = GroupBy::Group)]
    pub group_by: GroupBy,
    /// Group summary CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Mean/std-dev CSV.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    /// Source-versus-conflate scatter points and fits, as JSON.
    #[arg(long, requires = "scatter_source")]
    pub scatter_out: Option<PathBuf>,
    #[arg(long, requires = "scatter_out")]
    pub scatter_source: Option<String>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    pub csv: PathBuf,
    /// Number of databases the CSV was computed from.
    #[arg(long, default_value_t = 2)]
    pub n_sources: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CONFLATE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on start.
    #[arg(long, env = "CONFLATE_PORT", default_value_t = conflate_node::server::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "CONFLATE_DIFFICULTY", default_value_t = conflate_core::ledger::DEFAULT_DIFFICULTY)]
    pub difficulty: u32,
    #[arg(long, env = "CONFLATE_LEDGER", default_value = "author")]
    pub ledger: EntityKind,
    /// Chain file, one block per line; loaded on start when present.
    #[arg(long, env = "CONFLATE_PERSIST")]
    pub persist: Option<PathBuf>,
    #[arg(long = "peer", env = "CONFLATE_PEERS", value_delimiter = ',')]
    pub peers: Vec<String>,
    /// Database count assumed for CSV posts without ?n_sources.
    #[arg(long, env = "CONFLATE_N_SOURCES", default_value_t = conflate_node::server::DEFAULT_N_SOURCES)]
    pub n_sources: u32,
    /// Fixed block timestamp, for reproducible mining.
    #[arg(long, env = "CONFLATE_CLOCK")]
    pub clock: Option<u64>,
    /// Seconds to wait for each peer during resync.
    #[arg(long, default_value_t = 5)]
    pub peer_timeout: u64,
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    #[arg(long, env = "CONFLATE_NODE_URL", default_value = DEFAULT_NODE_URL)]
    pub node_url: String,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    /// Entity CSV, or a `.json` file of ledger entries.
    pub file: PathBuf,
    #[command(flatten)]
    pub node: NodeArgs,
    #[arg(long)]
    pub n_sources: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PeersArgs {
    pub peers: Vec<String>,
    #[command(flatten)]
    pub node: NodeArgs,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[command(flatten)]
    pub node: NodeArgs,
    /// Print the full chain response as JSON.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Serve(_)) {
        tracing_subscriber::fmt()
            .with_writer(std::io::stderr)
            .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
            .init();
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
