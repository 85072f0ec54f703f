//! Snapshot loading, DOI filtration and per-entity record assembly.
//!
//! A snapshot is one bibliographic database's view of a set of entities. The
//! file format is JSON:
//!
//! ```text
//! {"database": "scopus",
//!  "entities": [{"kind": "author", "id": "0000-0002-1825-0097", "group": "Sciences",
//!                "publications": [{"doi": "10.1/a", "citers": [{"doi": "10.1/b"}, {"doi": null}]}]}]}
//! ```
//!
//! Loading does not filter anything. [`filter_articles`] drops publications
//! without a usable DOI and [`filter_citers`] drops citers without one, after
//! which [`assemble`] merges the filtered snapshots for one entity.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_doi, DoiId, EntityKey, EntityRef, ModelError, PublicationRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read snapshot {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error at line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: duplicate entity {key}")]
    DuplicateEntity { origin: String, key: EntityKey },
    #[error("{origin}: {source}")]
    InvalidEntity {
        origin: String,
        #[source]
        source: ModelError,
    },
    #[error("{origin}: database name is empty")]
    EmptySourceName { origin: String },
    #[error("source {0:?} appears more than once in this run")]
    DuplicateSource(String),
    #[error("no snapshots supplied")]
    NoSnapshots,
    #[error("entity {0} does not appear in any snapshot")]
    UnknownEntity(EntityKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawCiter {
    #[serde(default)]
    pub doi: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawPublication {
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default)]
    pub citers: Vec<RawCiter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntity {
    #[serde(flatten)]
    pub entity: EntityRef,
    #[serde(default)]
    pub publications: Vec<RawPublication>,
}

/// One database's export, as loaded from disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSnapshot {
    #[serde(rename = "database")]
    pub source_name: String,
    #[serde(default)]
    pub entities: Vec<SnapshotEntity>,
}

impl DatabaseSnapshot {
    /// Parses snapshot JSON text. `origin` names the input in error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, IngestError> {
        let snapshot: DatabaseSnapshot =
            serde_json::from_str(text).map_err(|e| IngestError::Parse {
                origin: origin.to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        snapshot.check(origin)?;
        Ok(snapshot)
    }

    fn check(&self, origin: &str) -> Result<(), IngestError> {
        if self.source_name.trim().is_empty() {
            return Err(IngestError::EmptySourceName {
                origin: origin.to_string(),
            });
        }
        let mut seen = HashSet::new();
        for e in &self.entities {
            e.entity.kind.validate_id(&e.entity.id).map_err(|source| {
                IngestError::InvalidEntity {
                    origin: origin.to_string(),
                    source,
                }
            })?;
            if !seen.insert(e.entity.key()) {
                return Err(IngestError::DuplicateEntity {
                    origin: origin.to_string(),
                    key: e.entity.key(),
                });
            }
        }
        Ok(())
    }
}

/// Reads and parses a snapshot file. Nothing is filtered yet.
pub fn load_snapshot(path: impl AsRef<Path>) -> Result<DatabaseSnapshot, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DatabaseSnapshot::from_json_str(&text, &path.display().to_string())
}

/// Anything that can hand over a database snapshot: a fixture file today, a
/// live API adapter later.
pub trait SnapshotSource {
    fn describe(&self) -> String;
    fn fetch(&self) -> Result<DatabaseSnapshot, IngestError>;
}

#[derive(Debug, Clone)]
pub struct FileSource {
    path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl SnapshotSource for FileSource {
    fn describe(&self) -> String {
        self.path.display().to_string()
    }

    fn fetch(&self) -> Result<DatabaseSnapshot, IngestError> {
        load_snapshot(&self.path)
    }
}

/// Already-constructed snapshot, mostly for tests and embedding.
#[derive(Debug, Clone)]
pub struct InMemorySource(pub DatabaseSnapshot);

impl SnapshotSource for InMemorySource {
    fn describe(&self) -> String {
        format!("in-memory snapshot {:?}", self.0.source_name)
    }

    fn fetch(&self) -> Result<DatabaseSnapshot, IngestError> {
        self.0.check(&self.describe())?;
        Ok(self.0.clone())
    }
}

/// Drops publications without a valid DOI and rewrites the survivors'
/// DOIs into normalized form. Entities with no surviving publication stay.
pub fn filter_articles(mut snapshot: DatabaseSnapshot) -> DatabaseSnapshot {
    for entity in &mut snapshot.entities {
        entity.publications = std::mem::take(&mut entity.publications)
            .into_iter()
            .filter_map(|mut p| {
                let doi = normalize_doi(p.doi.as_deref()?).ok()?;
                p.doi = Some(doi.to_string());
                Some(p)
            })
            .collect();
    }
    snapshot
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredPublication {
    pub doi: DoiId,
    pub citers: BTreeSet<DoiId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredEntity {
    pub entity: EntityRef,
    pub publications: Vec<FilteredPublication>,
}

/// A snapshot whose publication and citer DOIs are all normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredSnapshot {
    pub source_name: String,
    pub entities: Vec<FilteredEntity>,
}

impl FilteredSnapshot {
    pub fn entity(&self, key: &EntityKey) -> Option<&FilteredEntity> {
        self.entities.iter().find(|e| e.entity.key() == *key)
    }
}

/// Drops citers without a valid DOI and deduplicates the rest per
/// publication. A publication listed twice under one entity is merged.
///
/// Publications that still lack a valid DOI are dropped as well, so the
/// result is well-typed even if [`filter_articles`] was skipped.
pub fn filter_citers(snapshot: DatabaseSnapshot) -> FilteredSnapshot {
    let entities = snapshot
        .entities
        .into_iter()
        .map(|e| {
            let mut merged: BTreeMap<DoiId, BTreeSet<DoiId>> = BTreeMap::new();
            for p in e.publications {
                let Some(doi) = p.doi.as_deref().and_then(|d| normalize_doi(d).ok()) else {
                    continue;
                };
                let citers = merged.entry(doi).or_default();
                citers.extend(
                    p.citers
                        .iter()
                        .filter_map(|c| normalize_doi(c.doi.as_deref()?).ok()),
                );
            }
            FilteredEntity {
                entity: e.entity,
                publications: merged
                    .into_iter()
                    .map(|(doi, citers)| FilteredPublication { doi, citers })
                    .collect(),
            }
        })
        .collect();
    FilteredSnapshot {
        source_name: snapshot.source_name,
        entities,
    }
}

/// Both filtration passes.
pub fn filter(snapshot: DatabaseSnapshot) -> FilteredSnapshot {
    filter_citers(filter_articles(snapshot))
}

/// Checks that source names are unique across one conflation run and
/// returns them sorted.
pub fn source_names(snapshots: &[FilteredSnapshot]) -> Result<Vec<String>, IngestError> {
    if snapshots.is_empty() {
        return Err(IngestError::NoSnapshots);
    }
    let mut names = BTreeSet::new();
    for s in snapshots {
        if !names.insert(s.source_name.clone()) {
            return Err(IngestError::DuplicateSource(s.source_name.clone()));
        }
    }
    Ok(names.into_iter().collect())
}

/// Every entity key present in any snapshot, sorted.
pub fn entity_keys(snapshots: &[FilteredSnapshot]) -> Vec<EntityKey> {
    let keys: BTreeSet<EntityKey> = snapshots
        .iter()
        .flat_map(|s| s.entities.iter().map(|e| e.entity.key()))
        .collect();
    keys.into_iter().collect()
}

/// Resolves the entity's full reference. When snapshots disagree on the
/// group label, the snapshot with the smallest source name wins.
pub fn resolve_entity(
    snapshots: &[FilteredSnapshot],
    key: &EntityKey,
) -> Result<EntityRef, IngestError> {
    snapshots
        .iter()
        .filter_map(|s| s.entity(key).map(|e| (&s.source_name, &e.entity)))
        .min_by(|a, b| a.0.cmp(b.0))
        .map(|(_, e)| e.clone())
        .ok_or_else(|| IngestError::UnknownEntity(key.clone()))
}

/// Merges one entity's publications across filtered snapshots.
///
/// Output holds one record per distinct publication DOI, sorted by DOI, so
/// the result does not depend on snapshot order.
pub fn assemble(
    snapshots: &[FilteredSnapshot],
    key: &EntityKey,
) -> Result<Vec<PublicationRecord>, IngestError> {
    source_names(snapshots)?;
    let mut merged: BTreeMap<DoiId, BTreeMap<String, BTreeSet<DoiId>>> = BTreeMap::new();
    let mut found = false;
    for snapshot in snapshots {
        let Some(entity) = snapshot.entity(key) else {
            continue;
        };
        found = true;
        for p in &entity.publications {
            merged
                .entry(p.doi.clone())
                .or_default()
                .entry(snapshot.source_name.clone())
                .or_default()
                .extend(p.citers.iter().cloned());
        }
    }
    if !found {
        return Err(IngestError::UnknownEntity(key.clone()));
    }
    Ok(merged
        .into_iter()
        .map(|(doi, citers)| {
            let sources = citers.keys().cloned().collect();
            PublicationRecord::new(doi, sources, citers)
                .expect("sources are derived from the citer map keys")
        })
        .collect())
}
