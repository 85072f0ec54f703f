//! The ledger node: one chain, a pending pool, and a peer list behind HTTP.
//!
//! Routes:
//!
//! | verb | path       | body                                   |
//! |------|------------|----------------------------------------|
//! | POST | `/profile` | entity CSV (text) or [`ProfileEntries`] (JSON); `?n_sources=N` |
//! | POST | `/mine`    | none                                   |
//! | GET  | `/chain`   | none                                   |
//! | GET  | `/pending` | none                                   |
//! | POST | `/peers`   | [`PeersRequest`]                        |
//! | GET  | `/peers`   | none                                   |
//! | POST | `/resync`  | none                                   |
//!
//! Every mutation goes through one async mutex. `GET /chain` reads a
//! snapshot that is swapped only after a new chain is fully validated, so
//! reads never wait on mining.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conflate_core::ledger::{
    self, genesis, mine_block, resolve, Chain, Clock, EntryError, LedgerEntry, LedgerError,
};
use conflate_core::model::EntityKind;
use conflate_core::report::read_entity_csv;
use futures::future::join_all;
use reqwest::Url;
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

use crate::api::{
    ChainResponse, ErrorBody, MineResponse, PeersRequest, PeersResponse, PendingResponse,
    ProfileAccepted, ProfileEntries, ResyncResponse, SkippedPeer,
};

pub const DEFAULT_PORT: u16 = 8000;
pub const DEFAULT_N_SOURCES: u32 = 2;
/// Genesis timestamp shared by all nodes so that their chains are comparable.
pub const GENESIS_TIMESTAMP: u64 = 0;

#[derive(Clone)]
pub struct NodeConfig {
    pub host: String,
    pub port: u16,
    pub ledger_kind: EntityKind,
    pub difficulty: u32,
    pub persist_path: Option<PathBuf>,
    pub peers: Vec<String>,
    pub default_n_sources: u32,
    pub peer_timeout: Duration,
    pub clock: Arc<dyn Clock>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            ledger_kind: EntityKind::Author,
            difficulty: ledger::DEFAULT_DIFFICULTY,
            persist_path: None,
            peers: Vec::new(),
            default_n_sources: DEFAULT_N_SOURCES,
            peer_timeout: Duration::from_secs(5),
            clock: Arc::new(ledger::SystemClock),
        }
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("{}", .0.error)]
    BadRequest(ErrorBody),
    #[error("nothing to mine")]
    NothingToMine,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("background task failed: {0}")]
    Task(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

impl NodeError {
    fn bad_request(message: impl Into<String>) -> Self {
        NodeError::BadRequest(ErrorBody {
            error: message.into(),
            line: None,
            column: None,
        })
    }
}

impl IntoResponse for NodeError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            NodeError::BadRequest(body) => (StatusCode::BAD_REQUEST, body),
            NodeError::NothingToMine => (
                StatusCode::CONFLICT,
                ErrorBody {
                    error: "nothing to mine: no pending entries".into(),
                    line: None,
                    column: None,
                },
            ),
            other => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: other.to_string(),
                    line: None,
                    column: None,
                },
            ),
        };
        (status, Json(body)).into_response()
    }
}

struct NodeState {
    chain: Chain,
    /// Entries awaiting mining, tagged with their entity id.
    pending: Vec<(String, LedgerEntry)>,
    peers: BTreeSet<String>,
}

pub struct Node {
    config: NodeConfig,
    self_addresses: BTreeSet<String>,
    state: Mutex<NodeState>,
    served: RwLock<Arc<Chain>>,
    http: reqwest::Client,
}

/// Canonical `scheme://host:port` form of a peer address.
pub fn normalize_peer(address: &str) -> Result<String, String> {
    let url = Url::parse(address.trim()).map_err(|e| format!("{address:?}: {e}"))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(format!("{address:?}: scheme must be http or https"));
    }
    let host = url
        .host_str()
        .ok_or_else(|| format!("{address:?}: missing host"))?;
    if url.path() != "/" || url.query().is_some() {
        return Err(format!("{address:?}: expected a base address without path"));
    }
    let port = url
        .port_or_known_default()
        .ok_or_else(|| format!("{address:?}: missing port"))?;
    Ok(format!("{}://{}:{}", url.scheme(), host, port))
}

impl Node {
    /// Builds a node for `port` (the actually bound port), loading the
    /// persisted chain when one exists.
    pub fn new(config: NodeConfig, port: u16) -> Result<Self, NodeError> {
        let chain = match &config.persist_path {
            Some(path) if path.exists() => {
                ledger::load_chain(path, config.ledger_kind, config.difficulty)?
            }
            _ => {
                let chain = genesis(config.ledger_kind, config.difficulty, GENESIS_TIMESTAMP)?;
                if let Some(path) = &config.persist_path {
                    ledger::save_chain(&chain, path)?;
                }
                chain
            }
        };
        let self_addresses = ["127.0.0.1", "localhost", "0.0.0.0", config.host.as_str()]
            .iter()
            .map(|h| format!("http://{h}:{port}"))
            .collect();
        let mut node = Self {
            self_addresses,
            served: RwLock::new(Arc::new(chain.clone())),
            state: Mutex::new(NodeState {
                chain,
                pending: Vec::new(),
                peers: BTreeSet::new(),
            }),
            http: reqwest::Client::builder()
                .timeout(config.peer_timeout)
                .build()
                .map_err(|e| NodeError::Task(e.to_string()))?,
            config,
        };
        let initial = node.validated_peers(&node.config.peers.clone())?;
        node.state.get_mut().peers.extend(initial);
        Ok(node)
    }

    fn validated_peers(&self, addresses: &[String]) -> Result<Vec<String>, NodeError> {
        addresses
            .iter()
            .map(|a| {
                let peer = normalize_peer(a).map_err(NodeError::bad_request)?;
                if self.self_addresses.contains(&peer) {
                    return Err(NodeError::bad_request(format!(
                        "{peer} is this node's own address"
                    )));
                }
                Ok(peer)
            })
            .collect()
    }

    /// Chain currently served to readers.
    pub fn chain_snapshot(&self) -> Arc<Chain> {
        self.served.read().expect("snapshot lock poisoned").clone()
    }

    fn publish(&self, chain: &Chain) {
        *self.served.write().expect("snapshot lock poisoned") = Arc::new(chain.clone());
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/profile", post(post_profile))
            .route("/mine", post(mine))
            .route("/chain", get(get_chain))
            .route("/pending", get(get_pending))
            .route("/peers", post(post_peers).get(get_peers))
            .route("/resync", post(resync))
            .layer(CorsLayer::permissive())
            .with_state(self)
    }

    fn entries_from_body(
        &self,
        headers: &HeaderMap,
        body: &str,
        n_sources: u32,
    ) -> Result<Vec<(String, LedgerEntry)>, NodeError> {
        let is_json = headers
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        if is_json {
            let profile: ProfileEntries = serde_json::from_str(body).map_err(|e| {
                NodeError::BadRequest(ErrorBody {
                    error: e.to_string(),
                    line: Some(e.line() as u64),
                    column: None,
                })
            })?;
            self.config
                .ledger_kind
                .validate_id(&profile.entity_id)
                .map_err(|e| NodeError::bad_request(e.to_string()))?;
            for (i, entry) in profile.entries.iter().enumerate() {
                entry
                    .check()
                    .map_err(|e| NodeError::bad_request(format!("entry {i}: {e}")))?;
            }
            return Ok(profile
                .entries
                .into_iter()
                .map(|e| (profile.entity_id.clone(), e))
                .collect());
        }

        let rows = read_entity_csv(body.as_bytes()).map_err(|e| {
            NodeError::BadRequest(ErrorBody {
                error: e.message.clone(),
                line: Some(e.line),
                column: e.column.clone(),
            })
        })?;
        // Data rows start on line 2, after the header.
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                let line = i as u64 + 2;
                let fail = |column: &str, error: String| {
                    NodeError::BadRequest(ErrorBody {
                        error,
                        line: Some(line),
                        column: Some(column.to_string()),
                    })
                };
                if row.entity_kind != self.config.ledger_kind {
                    return Err(fail(
                        "entity_kind",
                        format!(
                            "this node keeps the {} ledger, row is {}",
                            self.config.ledger_kind, row.entity_kind
                        ),
                    ));
                }
                let entry = LedgerEntry::from_csv_row(row, n_sources);
                entry.check().map_err(|e| {
                    let column = match e {
                        EntryError::CountMismatch { .. } => "union_citations",
                        EntryError::WeightMismatch { .. } => "weighted_citations",
                        EntryError::BadSourceCount => "sources",
                        _ => "doi",
                    };
                    fail(column, e.to_string())
                })?;
                Ok((row.entity_id.clone(), entry))
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct ProfileQuery {
    n_sources: Option<u32>,
}

async fn post_profile(
    State(node): State<Arc<Node>>,
    Query(query): Query<ProfileQuery>,
    headers: HeaderMap,
    body: String,
) -> Result<Json<ProfileAccepted>, NodeError> {
    let n_sources = query.n_sources.unwrap_or(node.config.default_n_sources);
    if n_sources == 0 {
        return Err(NodeError::bad_request("n_sources must be at least 1"));
    }
    let entries = node.entries_from_body(&headers, &body, n_sources)?;
    let accepted = entries.len();
    let mut state = node.state.lock().await;
    state.pending.extend(entries);
    Ok(Json(ProfileAccepted {
        accepted,
        pending: state.pending.len(),
    }))
}

async fn mine(State(node): State<Arc<Node>>) -> Result<Json<MineResponse>, NodeError> {
    let mut state = node.state.lock().await;
    if state.pending.is_empty() {
        return Err(NodeError::NothingToMine);
    }
    let mut by_entity: BTreeMap<String, Vec<LedgerEntry>> = BTreeMap::new();
    for (entity, entry) in &state.pending {
        by_entity
            .entry(entity.clone())
            .or_default()
            .push(entry.clone());
    }
    let mut chain = state.chain.clone();
    let clock = node.config.clock.clone();
    let (chain, mined) = tokio::task::spawn_blocking(move || {
        let mut mined = Vec::new();
        for (entity, entries) in by_entity {
            let block = mine_block(&chain, entries, &entity, clock.as_ref())?;
            chain.append(block.clone())?;
            mined.push(block);
        }
        Ok::<_, LedgerError>((chain, mined))
    })
    .await
    .map_err(|e| NodeError::Task(e.to_string()))??;

    if let Some(path) = &node.config.persist_path {
        for block in &mined {
            ledger::append_block_line(block, path)?;
        }
    }
    state.chain = chain;
    state.pending.clear();
    node.publish(&state.chain);
    tracing::info!(blocks = mined.len(), length = state.chain.len(), "mined");
    Ok(Json(MineResponse {
        blocks: mined.iter().map(Into::into).collect(),
        length: state.chain.len(),
    }))
}

async fn get_chain(State(node): State<Arc<Node>>) -> Json<ChainResponse> {
    Json(ChainResponse::from_chain(&node.chain_snapshot()))
}

async fn get_pending(State(node): State<Arc<Node>>) -> Json<PendingResponse> {
    let state = node.state.lock().await;
    let ids: BTreeSet<String> = state.pending.iter().map(|(e, _)| e.clone()).collect();
    Json(PendingResponse {
        count: state.pending.len(),
        entity_ids: ids.into_iter().collect(),
    })
}

async fn post_peers(
    State(node): State<Arc<Node>>,
    Json(request): Json<PeersRequest>,
) -> Result<Json<PeersResponse>, NodeError> {
    let peers = node.validated_peers(&request.peers)?;
    let mut state = node.state.lock().await;
    state.peers.extend(peers);
    Ok(Json(PeersResponse {
        peers: state.peers.iter().cloned().collect(),
    }))
}

async fn get_peers(State(node): State<Arc<Node>>) -> Json<PeersResponse> {
    let state = node.state.lock().await;
    Json(PeersResponse {
        peers: state.peers.iter().cloned().collect(),
    })
}

async fn fetch_chain(http: &reqwest::Client, peer: &str) -> Result<Chain, String> {
    let response = http
        .get(format!("{peer}/chain"))
        .send()
        .await
        .map_err(|e| e.to_string())?;
    if !response.status().is_success() {
        return Err(format!("status {}", response.status()));
    }
    let body: ChainResponse = response.json().await.map_err(|e| e.to_string())?;
    Ok(body.into_chain())
}

async fn resync(State(node): State<Arc<Node>>) -> Result<Json<ResyncResponse>, NodeError> {
    let peers: Vec<String> = node.state.lock().await.peers.iter().cloned().collect();
    let fetches = peers.iter().map(|p| fetch_chain(&node.http, p));
    let results = join_all(fetches).await;

    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for (peer, result) in peers.into_iter().zip(results) {
        match result {
            Ok(chain) => candidates.push(chain),
            Err(reason) => {
                tracing::warn!(%peer, %reason, "skipping peer");
                skipped.push(SkippedPeer { peer, reason });
            }
        }
    }

    let mut state = node.state.lock().await;
    let best = resolve(&state.chain, &candidates);
    let replaced = best != state.chain;
    if replaced {
        if let Some(path) = &node.config.persist_path {
            ledger::save_chain(&best, path)?;
        }
        state.chain = best;
        node.publish(&state.chain);
    }
    Ok(Json(ResyncResponse {
        replaced,
        length: state.chain.len(),
        skipped,
    }))
}

/// Binds the listener and returns the bound address with the server future.
pub async fn bind(
    config: NodeConfig,
) -> Result<
    (
        SocketAddr,
        Arc<Node>,
        impl std::future::Future<Output = std::io::Result<()>>,
    ),
    NodeError,
> {
    let addr = format!("{}:{}", config.host, config.port);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| NodeError::Bind { addr, source })?;
    let local = listener
        .local_addr()
        .map_err(|e| NodeError::Task(e.to_string()))?;
    let node = Arc::new(Node::new(config, local.port())?);
    let app = node.clone().router();
    Ok((local, node, async move { axum::serve(listener, app).await }))
}

/// Serves until the process is stopped.
pub async fn serve(config: NodeConfig) -> Result<(), NodeError> {
    let (addr, _node, server) = bind(config).await?;
    tracing::info!(%addr, "ledger node listening");
    server.await.map_err(|e| NodeError::Task(e.to_string()))
}
