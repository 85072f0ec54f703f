use std::fs::File;
use std::future::Future;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::Duration;

use anyhow::anyhow;
use conflate_core::engine::{
    conflate_all, conflate_from_snapshots, related_indicators, ConflateError,
};
use conflate_core::ingest::{filter, load_snapshot, FilteredSnapshot, IngestError};
use conflate_core::ledger::{FixedClock, LedgerError, SystemClock};
use conflate_core::model::{EntityKey, EntityMetrics};
use conflate_core::report::{
    aggregate, export_entity_csv, export_scatter_data, read_entity_csv, summarize_rows,
    summary_stats, write_group_csv, write_stats_csv, Columns, FieldStats, ReportError,
};
use conflate_node::api::{BlockView, ProfileEntries};
use conflate_node::{ClientError, NodeClient, NodeConfig, NodeError};

use crate::table::render;
use crate::{
    ChainArgs, Command, ComputeArgs, GroupBy, NodeArgs, PeersArgs, PostArgs, ReportArgs, ServeArgs,
    SummarizeArgs,
};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(1, e)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let code = match e {
            IngestError::Io { .. } => 1,
            IngestError::UnknownEntity(_) => 3,
            _ => 2,
        };
        Failure::new(code, e)
    }
}

impl From<ConflateError> for Failure {
    fn from(e: ConflateError) -> Self {
        match e {
            ConflateError::Ingest(e) => e.into(),
            ConflateError::Engine(e) => Failure::new(2, e),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        let code = match e {
            ReportError::Csv(_) | ReportError::EmptyInput | ReportError::UnknownSource(_) => 2,
            _ => 1,
        };
        Failure::new(code, e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match e {
            ClientError::Connect { .. } => 4,
            _ => 5,
        };
        Failure::new(code, e)
    }
}

impl From<NodeError> for Failure {
    fn from(e: NodeError) -> Self {
        let code = match e {
            NodeError::BadRequest(_)
            | NodeError::Ledger(LedgerError::ChainFile { .. })
            | NodeError::Ledger(LedgerError::InvalidChainFile { .. }) => 2,
            _ => 1,
        };
        Failure::new(code, e)
    }
}

type Result<T = ()> = std::result::Result<T, Failure>;

pub fn run(command: Command) -> Result {
    match command {
        Command::Compute(args) => compute(args),
        Command::Report(args) => report(args),
        Command::Summarize(args) => summarize(args),
        Command::Serve(args) => serve(args),
        Command::Post(args) => post(args),
        Command::Mine(args) => mine(args),
        Command::Resync(args) => resync(args),
        Command::Peers(args) => peers(args),
        Command::Chain(args) => chain(args),
    }
}

fn load_all(paths: &[std::path::PathBuf]) -> Result<Vec<FilteredSnapshot>> {
    paths
        .iter()
        .map(|p| Ok(filter(load_snapshot(p)?)))
        .collect()
}

fn compute(args: ComputeArgs) -> Result {
    let key = EntityKey::new(args.kind, args.id.trim()).map_err(|e| Failure::new(2, e))?;
    let snapshots = load_all(&args.sources)?;
    let metrics = conflate_from_snapshots(&snapshots, &key)?;
    if let Some(out) = &args.out {
        export_entity_csv(&metrics, out)?;
    }
    let mut stdout = io::stdout().lock();
    if args.json {
        serde_json::to_writer_pretty(&mut stdout, &related_indicators(&metrics))
            .map_err(|e| Failure::new(1, e))?;
        writeln!(stdout)?;
    } else {
        write!(stdout, "{}", indicator_table(&metrics))?;
    }
    Ok(())
}

fn indicator_table(metrics: &EntityMetrics) -> String {
    let ind = related_indicators(metrics);
    let row = |name: &str, i: &conflate_core::engine::Indicators| {
        vec![
            name.to_string(),
            i.articles.to_string(),
            i.citations.to_string(),
            i.h_index.to_string(),
            format!("{:.2}", i.mean_citations_per_article),
        ]
    };
    let mut rows: Vec<Vec<String>> = ind.per_source.iter().map(|(s, i)| row(s, i)).collect();
    rows.push(row("conflate", &ind.conflate));
    format!(
        "{} {} ({})\n{}",
        metrics.entity.kind,
        metrics.entity.id,
        metrics.entity.group,
        render(
            &[
                "source",
                "articles",
                "citations",
                "h_index",
                "citations_per_article"
            ],
            &rows
        )
    )
}

fn report(args: ReportArgs) -> Result {
    let snapshots = load_all(&args.sources)?;
    let metrics = conflate_all(&snapshots)?;
    let groups = match args.group_by {
        GroupBy::Group => aggregate(&metrics, |m| m.entity.group.clone())?,
        GroupBy::Kind => aggregate(&metrics, |m| m.entity.kind.to_string())?,
    };
    write_group_csv(&groups, io::BufWriter::new(File::create(&args.out)?))?;
    let stats = summary_stats(&metrics)?;
    if let Some(path) = &args.stats_out {
        write_stats_csv(&stats, io::BufWriter::new(File::create(path)?))?;
    }
    if let (Some(path), Some(source)) = (&args.scatter_out, &args.scatter_source) {
        export_scatter_data(&metrics, source, path)?;
    }
    print!(
        "entities={} groups={}\n{}",
        metrics.len(),
        groups.len(),
        stats_table(&stats)
    );
    Ok(())
}

fn stats_table(stats: &Columns<FieldStats>) -> String {
    let cell = |m: conflate_core::report::MeanStd| format!("{:.2} ({:.2})", m.mean, m.std_dev);
    let row = |name: &str, f: &FieldStats| {
        vec![
            name.to_string(),
            cell(f.articles),
            cell(f.citations),
            cell(f.h_index),
        ]
    };
    let mut rows: Vec<Vec<String>> = stats.per_source.iter().map(|(s, f)| row(s, f)).collect();
    rows.push(row("conflate", &stats.conflate));
    render(
        &["mean (std_dev)", "articles", "citations", "h_index"],
        &rows,
    )
}

fn summarize(args: SummarizeArgs) -> Result {
    if args.n_sources == 0 {
        return Err(Failure::new(2, anyhow!("--n-sources must be at least 1")));
    }
    let file = File::open(&args.csv)
        .map_err(|e| Failure::new(1, anyhow!("{}: {e}", args.csv.display())))?;
    let rows = read_entity_csv(io::BufReader::new(file))
        .map_err(|e| Failure::new(2, anyhow!("{}: {e}", args.csv.display())))?;
    let s = summarize_rows(&rows, args.n_sources);
    let mut table: Vec<Vec<String>> = s
        .per_source_articles
        .iter()
        .map(|(name, n)| vec![name.clone(), n.to_string(), "-".into(), "-".into()])
        .collect();
    table.push(vec![
        "conflate".into(),
        s.conflate_articles.to_string(),
        s.conflate_citations.to_string(),
        s.conflate_h.to_string(),
    ]);
    print!(
        "{}",
        render(&["source", "articles", "citations", "h_index"], &table)
    );
    Ok(())
}

fn runtime<F: Future>(f: F) -> Result<F::Output> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    Ok(rt.block_on(f))
}

fn serve(args: ServeArgs) -> Result {
    let config = NodeConfig {
        host: args.host,
        port: args.port,
        ledger_kind: args.ledger,
        difficulty: args.difficulty,
        persist_path: args.persist,
        peers: args.peers,
        default_n_sources: args.n_sources,
        peer_timeout: Duration::from_secs(args.peer_timeout),
        clock: match args.clock {
            Some(t) => Arc::new(FixedClock(t)),
            None => Arc::new(SystemClock),
        },
    };
    runtime(async move {
        let (addr, _node, server) = conflate_node::bind(config).await?;
        println!("listening on http://{addr}");
        io::stdout().flush()?;
        server.await.map_err(|e| Failure::new(1, e))
    })?
}

fn client(args: &NodeArgs) -> NodeClient {
    NodeClient::new(args.node_url.clone())
}

fn block_line(b: &BlockView) -> String {
    format!(
        "block index={} entity={} entries={} weighted_citations={} h_index={} hash={}",
        b.index, b.entity_id, b.entries, b.weighted_citations, b.h_index, b.hash
    )
}

fn post(args: PostArgs) -> Result {
    let body = std::fs::read_to_string(&args.file)
        .map_err(|e| Failure::new(1, anyhow!("{}: {e}", args.file.display())))?;
    let is_json = args
        .file
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let client = client(&args.node);
    let accepted = runtime(async {
        if is_json {
            let profile: ProfileEntries = serde_json::from_str(&body)
                .map_err(|e| Failure::new(2, anyhow!("{}: {e}", args.file.display())))?;
            Ok(client.post_profile_entries(&profile).await?)
        } else {
            Ok::<_, Failure>(client.post_profile_csv(&body, args.n_sources).await?)
        }
    })??;
    println!(
        "accepted={} pending={}",
        accepted.accepted, accepted.pending
    );
    Ok(())
}

fn mine(args: NodeArgs) -> Result {
    let mined = runtime(client(&args).mine())??;
    for b in &mined.blocks {
        println!("{}", block_line(b));
    }
    println!("length={}", mined.length);
    Ok(())
}

fn resync(args: NodeArgs) -> Result {
    let r = runtime(client(&args).resync())??;
    println!("replaced={} length={}", r.replaced, r.length);
    for s in &r.skipped {
        println!("skipped peer={} reason={}", s.peer, s.reason);
    }
    Ok(())
}

fn peers(args: PeersArgs) -> Result {
    let client = client(&args.node);
    let r = runtime(async {
        if args.peers.is_empty() {
            client.list_peers().await
        } else {
            client.register_peers(&args.peers).await
        }
    })??;
    for p in &r.peers {
        println!("{p}");
    }
    Ok(())
}

fn chain(args: ChainArgs) -> Result {
    let c = runtime(client(&args.node).chain())??;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&c).map_err(|e| Failure::new(1, e))?
        );
        return Ok(());
    }
    println!(
        "ledger={} difficulty={} length={}",
        c.ledger_kind, c.difficulty, c.length
    );
    for b in &c.blocks {
        println!("{}", block_line(&BlockView::from(b)));
    }
    Ok(())
}
