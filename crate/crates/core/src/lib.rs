//! Conflation of citation data from several bibliographic databases.
//!
//! Publications and their citing works are matched across databases by DOI.
//! Citers indexed by every database count fully; the rest are weighted by
//! `1/N`. The crate computes weighted article and citation counts plus
//! h-indices per author, organization or journal, aggregates them into group
//! reports, and records results in hash-chained informetric ledgers.

pub mod engine;
pub mod ingest;
pub mod ledger;
pub mod model;
pub mod report;

pub use engine::{
    conflate_all, conflate_entity, conflate_from_snapshots, h_index, partition, related_indicators,
    weighted_score, ConflateError, EngineError,
};
pub use ingest::{
    assemble, filter, filter_articles, filter_citers, load_snapshot, DatabaseSnapshot,
    FilteredSnapshot, IngestError, SnapshotSource,
};
pub use ledger::{mine_block, resolve, validate_chain, Block, Chain, LedgerEntry, LedgerError};
pub use model::{
    normalize_doi, CitationPartition, DoiId, EntityKey, EntityKind, EntityMetrics, EntityRef,
    PublicationRecord, WeightedCitationScore,
};
