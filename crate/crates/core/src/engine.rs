//! Conflation core: citer-set partitioning, pay-off weighting and h-index.
//!
//! For a publication seen by `N` databases, a citer present in every
//! database's citer set is *common* and counts 1; any other citer is *unique*
//! and counts `1/N`. Entity totals apply a single ceiling to the summed
//! weights, while per-publication scores carry their own ceiling for display.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, FilteredSnapshot, IngestError};
use crate::model::{
    CitationPartition, DoiId, EntityKey, EntityMetrics, EntityRef, PublicationMetrics,
    PublicationRecord, WeightedCitationScore,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("conflation needs at least one source")]
    ZeroSources,
    #[error("{given} citer sets supplied for {n_sources} sources")]
    TooManySources { given: usize, n_sources: usize },
    #[error("record {doi} lists source {source_name:?} outside this run")]
    UnknownSource { doi: DoiId, source_name: String },
}

/// Splits the merged citer set of one publication.
///
/// Sources missing from the map contribute an empty set, so `common` is
/// empty unless all `n_sources` sets are supplied.
pub fn partition(
    citers_by_source: &BTreeMap<String, BTreeSet<DoiId>>,
    n_sources: usize,
) -> Result<CitationPartition, EngineError> {
    if n_sources == 0 {
        return Err(EngineError::ZeroSources);
    }
    if citers_by_source.len() > n_sources {
        return Err(EngineError::TooManySources {
            given: citers_by_source.len(),
            n_sources,
        });
    }
    let union_all: BTreeSet<DoiId> = citers_by_source.values().flatten().cloned().collect();
    let common: BTreeSet<DoiId> = if citers_by_source.len() < n_sources {
        BTreeSet::new()
    } else {
        union_all
            .iter()
            .filter(|d| citers_by_source.values().all(|set| set.contains(*d)))
            .cloned()
            .collect()
    };
    let unique = union_all.difference(&common).cloned().collect();
    Ok(CitationPartition {
        n_sources,
        common,
        unique,
        union_all,
    })
}

pub fn weighted_score(partition: &CitationPartition) -> WeightedCitationScore {
    WeightedCitationScore::from_counts(
        partition.common.len() as u64,
        partition.unique.len() as u64,
        partition.n_sources as u64,
    )
}

/// Largest `h` such that at least `h` counts are `>= h`.
pub fn h_index(citation_counts: &[u64]) -> u64 {
    let mut sorted = citation_counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .enumerate()
        .take_while(|(i, &c)| c > *i as u64)
        .count() as u64
}

/// Computes per-source and conflated indicators for one entity.
///
/// `source_names` lists every source in the run; its length is `N`.
pub fn conflate_entity(
    entity: EntityRef,
    records: &[PublicationRecord],
    source_names: &[String],
) -> Result<EntityMetrics, EngineError> {
    let n = source_names.len();
    if n == 0 {
        return Err(EngineError::ZeroSources);
    }
    for r in records {
        if let Some(stray) = r.sources().iter().find(|s| !source_names.contains(s)) {
            return Err(EngineError::UnknownSource {
                doi: r.doi().clone(),
                source_name: stray.clone(),
            });
        }
    }

    let mut per_source_articles = BTreeMap::new();
    let mut per_source_citations = BTreeMap::new();
    let mut per_source_h = BTreeMap::new();
    for source in source_names {
        let counts: Vec<u64> = records.iter().map(|r| r.citations_in(source)).collect();
        let articles = records
            .iter()
            .filter(|r| r.sources().contains(source))
            .count() as u64;
        per_source_articles.insert(source.clone(), articles);
        per_source_citations.insert(source.clone(), counts.iter().sum());
        per_source_h.insert(source.clone(), h_index(&counts));
    }

    let per_publication = records
        .iter()
        .map(|r| {
            let partition = partition(r.citers_by_source(), n)?;
            let score = weighted_score(&partition);
            Ok(PublicationMetrics {
                doi: r.doi().clone(),
                sources: r.sources().clone(),
                partition,
                score,
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;

    let common_total: u64 = per_publication.iter().map(|p| p.score.s1).sum();
    let unique_total: u64 = per_publication.iter().map(|p| p.score.unique).sum();
    let conflate_citations =
        WeightedCitationScore::from_counts(common_total, unique_total, n as u64).s;

    let in_all = records.iter().filter(|r| r.sources().len() == n).count() as u64;
    let in_some = records.len() as u64 - in_all;
    let conflate_articles = WeightedCitationScore::from_counts(in_all, in_some, n as u64).s;

    let union_counts: Vec<u64> = per_publication
        .iter()
        .map(|p| p.partition.union_all.len() as u64)
        .collect();

    Ok(EntityMetrics {
        entity,
        source_names: source_names.to_vec(),
        per_source_articles,
        per_source_citations,
        per_source_h,
        conflate_articles,
        conflate_citations,
        conflate_h: h_index(&union_counts),
        per_publication,
    })
}

/// Assembles and conflates one entity from filtered snapshots.
pub fn conflate_from_snapshots(
    snapshots: &[FilteredSnapshot],
    key: &EntityKey,
) -> Result<EntityMetrics, ConflateError> {
    let names = ingest::source_names(snapshots)?;
    let entity = ingest::resolve_entity(snapshots, key)?;
    let records = ingest::assemble(snapshots, key)?;
    Ok(conflate_entity(entity, &records, &names)?)
}

/// Conflates every entity found in the snapshots, in key order.
pub fn conflate_all(snapshots: &[FilteredSnapshot]) -> Result<Vec<EntityMetrics>, ConflateError> {
    ingest::source_names(snapshots)?;
    ingest::entity_keys(snapshots)
        .par_iter()
        .map(|key| conflate_from_snapshots(snapshots, key))
        .collect()
}

#[derive(Debug, Error)]
pub enum ConflateError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub articles: u64,
    pub citations: u64,
    pub h_index: u64,
    pub mean_citations_per_article: f64,
}

impl Indicators {
    fn new(articles: u64, citations: u64, h_index: u64) -> Self {
        let mean_citations_per_article = if articles == 0 {
            0.0
        } else {
            citations as f64 / articles as f64
        };
        Self {
            articles,
            citations,
            h_index,
            mean_citations_per_article,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSummary {
    pub per_source: BTreeMap<String, Indicators>,
    pub conflate: Indicators,
}

pub fn related_indicators(metrics: &EntityMetrics) -> IndicatorSummary {
    let per_source = metrics
        .source_names
        .iter()
        .map(|s| {
            let get = |m: &BTreeMap<String, u64>| m.get(s).copied().unwrap_or(0);
            (
                s.clone(),
                Indicators::new(
                    get(&metrics.per_source_articles),
                    get(&metrics.per_source_citations),
                    get(&metrics.per_source_h),
                ),
            )
        })
        .collect();
    IndicatorSummary {
        per_source,
        conflate: Indicators::new(
            metrics.conflate_articles,
            metrics.conflate_citations,
            metrics.conflate_h,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_doi, EntityKind};

    fn set(items: &[&str]) -> BTreeSet<DoiId> {
        items
            .iter()
            .map(|s| normalize_doi(&format!("10.9/{s}")).unwrap())
            .collect()
    }

    fn two(s: &[&str], w: &[&str]) -> BTreeMap<String, BTreeSet<DoiId>> {
        BTreeMap::from([("scopus".into(), set(s)), ("wos".into(), set(w))])
    }

    fn names() -> Vec<String> {
        vec!["scopus".into(), "wos".into()]
    }

    fn author() -> EntityRef {
        EntityRef::new(EntityKind::Author, "0000-0002-1825-0097", "Sciences").unwrap()
    }

    fn record(doi: &str, citers: BTreeMap<String, BTreeSet<DoiId>>) -> PublicationRecord {
        let sources = citers.keys().cloned().collect();
        PublicationRecord::new(normalize_doi(doi).unwrap(), sources, citers).unwrap()
    }

    #[test]
    fn partition_worked_examples() {
        let p1 = partition(&two(&["a", "b", "c"], &[]), 2).unwrap();
        assert!(p1.common.is_empty());
        assert_eq!(p1.unique, set(&["a", "b", "c"]));

        let p2 = partition(&two(&["a", "b", "c"], &["a", "b", "d"]), 2).unwrap();
        assert_eq!(p2.common, set(&["a", "b"]));
        assert_eq!(p2.unique, set(&["c", "d"]));

        let p3 = partition(&two(&["a", "b", "c"], &["a", "b", "c"]), 2).unwrap();
        assert_eq!(p3.common, set(&["a", "b", "c"]));
        assert!(p3.unique.is_empty());
    }

    #[test]
    fn absent_source_means_no_common() {
        let only_s = BTreeMap::from([("scopus".to_string(), set(&["a", "b"]))]);
        let p = partition(&only_s, 2).unwrap();
        assert!(p.common.is_empty());
        assert_eq!(p.unique.len(), 2);
        let p1 = partition(&only_s, 1).unwrap();
        assert_eq!(p1.common.len(), 2);
    }

    #[test]
    fn partition_errors() {
        assert_eq!(
            partition(&BTreeMap::new(), 0),
            Err(EngineError::ZeroSources)
        );
        assert!(matches!(
            partition(&two(&[], &[]), 1),
            Err(EngineError::TooManySources { .. })
        ));
    }

    #[test]
    fn three_sources_partial_overlap_is_unique() {
        let m = BTreeMap::from([
            ("a".to_string(), set(&["x", "y"])),
            ("b".to_string(), set(&["x", "y"])),
            ("c".to_string(), set(&["x"])),
        ]);
        let p = partition(&m, 3).unwrap();
        assert_eq!(p.common, set(&["x"]));
        assert_eq!(p.unique, set(&["y"]));
        // 1 + 1/3 rounds up to 2
        assert_eq!(weighted_score(&p).s, 2);
    }

    #[test]
    fn weighted_scores_worked_examples() {
        let s = |a, b| weighted_score(&partition(&two(a, b), 2).unwrap()).s;
        assert_eq!(s(&["a", "b", "c"], &[]), 2);
        assert_eq!(s(&["a", "b", "c"], &["a", "b", "d"]), 3);
        assert_eq!(s(&["a", "b", "c"], &["a", "b", "c"]), 3);
    }

    #[test]
    fn h_index_examples() {
        assert_eq!(h_index(&[]), 0);
        assert_eq!(h_index(&[3, 1, 1]), 1);
        assert_eq!(h_index(&[5, 4, 4, 2, 1]), 3);
        assert_eq!(h_index(&[0, 0]), 0);
        assert_eq!(h_index(&[10, 10, 10]), 3);
    }

    #[test]
    fn conflate_single_overlapping_publication() {
        let r = record("10.1/p", two(&["a", "b", "c"], &["a", "b", "d"]));
        let m = conflate_entity(author(), &[r], &names()).unwrap();
        assert_eq!(m.conflate_citations, 3);
        assert_eq!(m.conflate_h, 1);
        assert_eq!(m.conflate_articles, 1);
        assert_eq!(m.per_source_citations["scopus"], 3);
        assert_eq!(m.per_source_citations["wos"], 3);
        assert_eq!(m.per_source_h["scopus"], 1);
        assert_eq!(m.per_publication[0].partition.union_all.len(), 4);
    }

    #[test]
    fn conflate_applies_one_ceiling_to_the_total() {
        let r1 = record("10.1/p", two(&["a", "b", "c"], &[]));
        let r2 = record("10.1/q", two(&["d", "e", "f"], &[]));
        let m = conflate_entity(author(), &[r1, r2], &names()).unwrap();
        // per-publication ceilings would give 2 + 2
        assert_eq!(m.conflate_citations, 3);
        assert_eq!(m.per_publication[0].score.s, 2);
    }

    #[test]
    fn conflate_articles_use_pay_off_rule() {
        let only_s = BTreeMap::from([("scopus".to_string(), set(&["a"]))]);
        let only_w = BTreeMap::from([("wos".to_string(), set(&["b"]))]);
        let records = [
            record("10.1/both", two(&["x"], &["x"])),
            record("10.1/s", only_s.clone()),
            record("10.1/s2", only_s),
            record("10.1/w", only_w),
        ];
        let m = conflate_entity(author(), &records, &names()).unwrap();
        // 1 + 3/2 = 2.5 -> 3
        assert_eq!(m.conflate_articles, 3);
        assert_eq!(m.per_source_articles["scopus"], 3);
        assert_eq!(m.per_source_articles["wos"], 2);
        // wos h over [1, 0, 0, 1]
        assert_eq!(m.per_source_h["wos"], 1);
    }

    #[test]
    fn conflate_empty_entity_is_all_zero() {
        let m = conflate_entity(author(), &[], &names()).unwrap();
        assert_eq!(
            (m.conflate_articles, m.conflate_citations, m.conflate_h),
            (0, 0, 0)
        );
        assert!(m.per_source_articles.values().all(|&v| v == 0));
        assert!(m.per_source_h.values().all(|&v| v == 0));
        let ind = related_indicators(&m);
        assert_eq!(ind.conflate.mean_citations_per_article, 0.0);
    }

    #[test]
    fn conflate_rejects_foreign_source() {
        let r = record("10.1/p", BTreeMap::from([("gs".to_string(), set(&["a"]))]));
        assert!(matches!(
            conflate_entity(author(), &[r], &names()),
            Err(EngineError::UnknownSource { .. })
        ));
        assert_eq!(
            conflate_entity(author(), &[], &[]).unwrap_err(),
            EngineError::ZeroSources
        );
    }

    #[test]
    fn indicators_for_overlapping_publication() {
        let r = record("10.1/p", two(&["a", "b", "c"], &["a", "b", "d"]));
        let m = conflate_entity(author(), &[r], &names()).unwrap();
        let ind = related_indicators(&m);
        assert_eq!(ind.per_source["scopus"].mean_citations_per_article, 3.0);
        assert_eq!(ind.per_source["wos"].mean_citations_per_article, 3.0);
        assert_eq!(ind.conflate.mean_citations_per_article, 3.0);
        assert_eq!(ind.conflate.h_index, 1);
    }
}
