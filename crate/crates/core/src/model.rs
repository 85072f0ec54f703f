//! Domain types shared by ingestion, conflation, reporting and the ledger.
//!
//! Every set operation in the crate is keyed on [`DoiId`], which can only be
//! obtained through [`normalize_doi`]. Raw DOI strings never reach the engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Resolver prefixes stripped from raw DOI strings, matched case-insensitively.
const DOI_PREFIXES: &[&str] = &[
    "https://doi.org/",
    "http://doi.org/",
    "https://dx.doi.org/",
    "http://dx.doi.org/",
    "doi.org/",
    "dx.doi.org/",
    "doi:",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("DOI is empty after normalization (raw input {raw:?})")]
    EmptyDoi { raw: String },
    #[error("DOI {raw:?} has no '/' separating prefix and suffix")]
    MalformedDoi { raw: String },
    #[error("DOI {raw:?} is not in normalized form")]
    NotNormalized { raw: String },
    #[error("invalid {kind} identifier {id:?}: {reason}")]
    InvalidEntityId {
        kind: EntityKind,
        id: String,
        reason: &'static str,
    },
    #[error("source {source_name:?} has citers but does not list the publication")]
    CitersWithoutSource { source_name: String },
    #[error("publication must be present in at least one source")]
    NoSources,
}

/// A normalized Digital Object Identifier.
///
/// Normalized form is trimmed, lowercased and free of resolver prefixes, and
/// always contains a non-empty prefix and suffix around the first `/`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct DoiId(String);

/// Normalizes a raw DOI string into a [`DoiId`].
///
/// Resolver prefixes are stripped repeatedly so that normalization is
/// idempotent even for inputs such as `doi:https://doi.org/10.1/x`.
pub fn normalize_doi(raw: &str) -> Result<DoiId, ModelError> {
    let mut value = raw.trim().to_lowercase();
    loop {
        let stripped = DOI_PREFIXES
            .iter()
            .find_map(|prefix| value.strip_prefix(prefix))
            .map(|rest| rest.trim().to_string());
        match stripped {
            Some(rest) => value = rest,
            None => break,
        }
    }
    if value.is_empty() {
        return Err(ModelError::EmptyDoi {
            raw: raw.to_string(),
        });
    }
    match value.split_once('/') {
        Some((prefix, suffix)) if !prefix.is_empty() && !suffix.is_empty() => Ok(DoiId(value)),
        _ => Err(ModelError::MalformedDoi {
            raw: raw.to_string(),
        }),
    }
}

impl DoiId {
    /// Accepts only strings that are already in normalized form.
    ///
    /// Used when reading persisted ledger data, where silently re-normalizing
    /// would hide tampering.
    pub fn parse_normalized(value: &str) -> Result<Self, ModelError> {
        let doi = normalize_doi(value)?;
        if doi.0 != value {
            return Err(ModelError::NotNormalized {
                raw: value.to_string(),
            });
        }
        Ok(doi)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DoiId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_doi(s)
    }
}

impl AsRef<str> for DoiId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

// Deserialization is strict: serialized DoiIds must already be normalized.
impl<'de> Deserialize<'de> for DoiId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        DoiId::parse_normalized(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Author,
    Organization,
    Journal,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [
        EntityKind::Author,
        EntityKind::Organization,
        EntityKind::Journal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Author => "author",
            EntityKind::Organization => "organization",
            EntityKind::Journal => "journal",
        }
    }

    /// Single-byte tag used in the ledger's canonical block layout.
    pub fn tag(self) -> u8 {
        match self {
            EntityKind::Author => 0,
            EntityKind::Organization => 1,
            EntityKind::Journal => 2,
        }
    }

    /// Checks that `id` has the identifier shape required for this kind.
    pub fn validate_id(self, id: &str) -> Result<(), ModelError> {
        let fail = |reason| ModelError::InvalidEntityId {
            kind: self,
            id: id.to_string(),
            reason,
        };
        match self {
            EntityKind::Author => {
                let blocks: Vec<&str> = id.split('-').collect();
                let ok = blocks.len() == 4
                    && blocks
                        .iter()
                        .all(|b| b.len() == 4 && b.chars().all(|c| c.is_ascii_alphanumeric()));
                if ok {
                    Ok(())
                } else {
                    Err(fail("expected ORCID shape XXXX-XXXX-XXXX-XXXX"))
                }
            }
            EntityKind::Journal => {
                let bytes = id.as_bytes();
                let ok = bytes.len() == 9
                    && bytes[4] == b'-'
                    && bytes[..4].iter().all(u8::is_ascii_digit)
                    && bytes[5..8].iter().all(u8::is_ascii_digit)
                    && (bytes[8].is_ascii_digit() || bytes[8] == b'X');
                if ok {
                    Ok(())
                } else {
                    Err(fail("expected ISSN shape NNNN-NNNC"))
                }
            }
            EntityKind::Organization => {
                if id.trim().is_empty() {
                    Err(fail("organization name is empty"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "author" => Ok(EntityKind::Author),
            "organization" | "organisation" => Ok(EntityKind::Organization),
            "journal" => Ok(EntityKind::Journal),
            other => Err(format!("unknown entity kind {other:?}")),
        }
    }
}

/// Identity of an entity within one kind: ORCID, organization name or ISSN.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityKey {
    pub kind: EntityKind,
    pub id: String,
}

impl EntityKey {
    pub fn new(kind: EntityKind, id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        kind.validate_id(&id)?;
        Ok(Self { kind, id })
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind, self.id)
    }
}

/// An author, organization or journal together with its group label.
///
/// The group (a discipline or an organization category) is an opaque label
/// carried through from the input data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub id: String,
    pub group: String,
}

impl EntityRef {
    pub fn new(
        kind: EntityKind,
        id: impl Into<String>,
        group: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        kind.validate_id(&id)?;
        Ok(Self {
            kind,
            id,
            group: group.into(),
        })
    }

    pub fn key(&self) -> EntityKey {
        EntityKey {
            kind: self.kind,
            id: self.id.clone(),
        }
    }
}

/// One article as seen across all sources that index it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicationRecord {
    doi: DoiId,
    sources: BTreeSet<String>,
    citers_by_source: BTreeMap<String, BTreeSet<DoiId>>,
}

impl PublicationRecord {
    /// Builds a record, dropping any self-citation of `doi`.
    ///
    /// Every source in `sources` gets an entry in the citer map (empty when
    /// that source lists no citers).
    pub fn new(
        doi: DoiId,
        sources: BTreeSet<String>,
        mut citers_by_source: BTreeMap<String, BTreeSet<DoiId>>,
    ) -> Result<Self, ModelError> {
        if sources.is_empty() {
            return Err(ModelError::NoSources);
        }
        if let Some(stray) = citers_by_source.keys().find(|s| !sources.contains(*s)) {
            return Err(ModelError::CitersWithoutSource {
                source_name: stray.clone(),
            });
        }
        for source in &sources {
            citers_by_source.entry(source.clone()).or_default();
        }
        for citers in citers_by_source.values_mut() {
            citers.remove(&doi);
        }
        Ok(Self {
            doi,
            sources,
            citers_by_source,
        })
    }

    pub fn doi(&self) -> &DoiId {
        &self.doi
    }

    pub fn sources(&self) -> &BTreeSet<String> {
        &self.sources
    }

    pub fn citers_by_source(&self) -> &BTreeMap<String, BTreeSet<DoiId>> {
        &self.citers_by_source
    }

    /// Citer count reported by `source`, zero when the source lacks the article.
    pub fn citations_in(&self, source: &str) -> u64 {
        self.citers_by_source
            .get(source)
            .map_or(0, |set| set.len() as u64)
    }
}

/// Split of a publication's merged citer set into citers present in every
/// source and citers missing from at least one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationPartition {
    pub n_sources: usize,
    pub common: BTreeSet<DoiId>,
    pub unique: BTreeSet<DoiId>,
    pub union_all: BTreeSet<DoiId>,
}

/// Pay-off weighted citation count for one publication or one entity.
///
/// Common citations carry weight 1 and unique ones weight `1/N`, so the
/// fractional part is kept as the exact rational `unique / n_sources`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedCitationScore {
    pub s1: u64,
    pub unique: u64,
    pub n_sources: u64,
    pub s: u64,
}

impl WeightedCitationScore {
    /// Exact computation of `ceil(common + unique / n_sources)`.
    pub fn from_counts(common: u64, unique: u64, n_sources: u64) -> Self {
        assert!(n_sources > 0, "pay-off weighting needs at least one source");
        Self {
            s1: common,
            unique,
            n_sources,
            s: common + unique.div_ceil(n_sources),
        }
    }

    /// The unique-citation contribution `|unique| / N`.
    pub fn s2(&self) -> f64 {
        self.unique as f64 / self.n_sources as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicationMetrics {
    pub doi: DoiId,
    pub sources: BTreeSet<String>,
    pub partition: CitationPartition,
    pub score: WeightedCitationScore,
}

/// Per-source and conflated indicators for one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub entity: EntityRef,
    pub source_names: Vec<String>,
    pub per_source_articles: BTreeMap<String, u64>,
    pub per_source_citations: BTreeMap<String, u64>,
    pub per_source_h: BTreeMap<String, u64>,
    pub conflate_articles: u64,
    pub conflate_citations: u64,
    pub conflate_h: u64,
    pub per_publication: Vec<PublicationMetrics>,
}

impl EntityMetrics {
    pub fn n_sources(&self) -> usize {
        self.source_names.len()
    }
}
