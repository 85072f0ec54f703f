//! Group-level aggregation, summary statistics and file exports.
//!
//! The entity CSV is also the payload a ledger node accepts, so its layout is
//! fixed: LF line endings, the header in [`ENTITY_CSV_HEADER`], one row per
//! publication sorted by DOI, and `sources` joined with `+`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::h_index;
use crate::model::{normalize_doi, DoiId, EntityKind, EntityMetrics, WeightedCitationScore};

pub const ENTITY_CSV_HEADER: [&str; 9] = [
    "entity_kind",
    "entity_id",
    "group",
    "doi",
    "sources",
    "common_citations",
    "unique_citations",
    "union_citations",
    "weighted_citations",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no entities to report on")]
    EmptyInput,
    #[error("least-squares fit needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("least-squares fit is degenerate: all x values are equal")]
    DegenerateFit,
    #[error("source {0:?} is not part of these metrics")]
    UnknownSource(String),
    #[error(transparent)]
    Csv(#[from] CsvRowError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A CSV problem located by 1-based line number and column name.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("line {line}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
pub struct CsvRowError {
    pub line: u64,
    pub column: Option<String>,
    pub message: String,
}

/// Values for each source plus the conflated column.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Columns<T> {
    pub per_source: BTreeMap<String, T>,
    pub conflate: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub entities: usize,
    pub articles: Columns<u64>,
    pub citations: Columns<u64>,
    /// Mean h-index over the group's entities, rounded half up.
    pub avg_h: Columns<u64>,
}

fn all_sources(metrics: &[EntityMetrics]) -> Vec<String> {
    let names: BTreeSet<&String> = metrics.iter().flat_map(|m| &m.source_names).collect();
    names.into_iter().cloned().collect()
}

fn lookup(map: &BTreeMap<String, u64>, key: &str) -> u64 {
    map.get(key).copied().unwrap_or(0)
}

/// Integer mean rounded half up.
fn round_half_up_mean(sum: u64, n: u64) -> u64 {
    (2 * sum + n) / (2 * n)
}

/// One summary per distinct group label, sorted by label.
pub fn aggregate<F>(
    metrics: &[EntityMetrics],
    group_by: F,
) -> Result<Vec<GroupSummary>, ReportError>
where
    F: Fn(&EntityMetrics) -> String,
{
    if metrics.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let sources = all_sources(metrics);
    let mut groups: BTreeMap<String, Vec<&EntityMetrics>> = BTreeMap::new();
    for m in metrics {
        groups.entry(group_by(m)).or_default().push(m);
    }
    Ok(groups
        .into_iter()
        .map(|(group, members)| {
            let n = members.len() as u64;
            let total =
                |f: &dyn Fn(&EntityMetrics) -> u64| members.iter().map(|m| f(m)).sum::<u64>();
            let per_source = |f: &dyn Fn(&EntityMetrics, &str) -> u64| {
                sources
                    .iter()
                    .map(|s| (s.clone(), members.iter().map(|m| f(m, s)).sum::<u64>()))
                    .collect::<BTreeMap<_, _>>()
            };
            let h_sums = per_source(&|m, s| lookup(&m.per_source_h, s));
            GroupSummary {
                entities: members.len(),
                articles: Columns {
                    per_source: per_source(&|m, s| lookup(&m.per_source_articles, s)),
                    conflate: total(&|m| m.conflate_articles),
                },
                citations: Columns {
                    per_source: per_source(&|m, s| lookup(&m.per_source_citations, s)),
                    conflate: total(&|m| m.conflate_citations),
                },
                avg_h: Columns {
                    per_source: h_sums
                        .into_iter()
                        .map(|(s, sum)| (s, round_half_up_mean(sum, n)))
                        .collect(),
                    conflate: round_half_up_mean(total(&|m| m.conflate_h), n),
                },
                group,
            }
        })
        .collect())
}

pub fn write_group_csv<W: Write>(summaries: &[GroupSummary], out: W) -> Result<(), ReportError> {
    let sources: BTreeSet<&String> = summaries
        .iter()
        .flat_map(|s| s.articles.per_source.keys())
        .collect();
    let mut w = csv_writer(out);
    let mut header = vec!["group".to_string(), "entities".to_string()];
    for metric in ["articles", "citations", "avg_h"] {
        header.extend(sources.iter().map(|s| format!("{s}_{metric}")));
        header.push(format!("conflate_{metric}"));
    }
    w.write_record(&header).map_err(csv_io)?;
    for g in summaries {
        let mut row = vec![g.group.clone(), g.entities.to_string()];
        for cols in [&g.articles, &g.citations, &g.avg_h] {
            row.extend(
                sources
                    .iter()
                    .map(|s| lookup(&cols.per_source, s).to_string()),
            );
            row.push(cols.conflate.to_string());
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divides by `n`).
    pub std_dev: f64,
}

impl MeanStd {
    fn of(values: &[u64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        Self {
            mean,
            std_dev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub articles: MeanStd,
    pub citations: MeanStd,
    pub h_index: MeanStd,
}

pub fn summary_stats(metrics: &[EntityMetrics]) -> Result<Columns<FieldStats>, ReportError> {
    if metrics.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let stats = |a: Vec<u64>, c: Vec<u64>, h: Vec<u64>| FieldStats {
        articles: MeanStd::of(&a),
        citations: MeanStd::of(&c),
        h_index: MeanStd::of(&h),
    };
    let per_source = all_sources(metrics)
        .into_iter()
        .map(|s| {
            let col = |f: fn(&EntityMetrics) -> &BTreeMap<String, u64>| {
                metrics.iter().map(|m| lookup(f(m), &s)).collect::<Vec<_>>()
            };
            let fs = stats(
                col(|m| &m.per_source_articles),
                col(|m| &m.per_source_citations),
                col(|m| &m.per_source_h),
            );
            (s, fs)
        })
        .collect();
    let conflate = stats(
        metrics.iter().map(|m| m.conflate_articles).collect(),
        metrics.iter().map(|m| m.conflate_citations).collect(),
        metrics.iter().map(|m| m.conflate_h).collect(),
    );
    Ok(Columns {
        per_source,
        conflate,
    })
}

pub fn write_stats_csv<W: Write>(stats: &Columns<FieldStats>, out: W) -> Result<(), ReportError> {
    let mut w = csv_writer(out);
    w.write_record(["column", "field", "mean", "std_dev"])
        .map_err(csv_io)?;
    let columns = stats
        .per_source
        .iter()
        .map(|(s, f)| (s.as_str(), f))
        .chain(std::iter::once(("conflate", &stats.conflate)));
    for (name, f) in columns {
        for (field, ms) in [
            ("articles", f.articles),
            ("citations", f.citations),
            ("h_index", f.h_index),
        ] {
            w.write_record([
                name,
                field,
                &format!("{:.2}", ms.mean),
                &format!("{:.2}", ms.std_dev),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One publication row of the entity CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCsvRow {
    pub entity_kind: EntityKind,
    pub entity_id: String,
    pub group: String,
    pub doi: DoiId,
    pub sources: BTreeSet<String>,
    pub common_citations: u64,
    pub unique_citations: u64,
    pub union_citations: u64,
    pub weighted_citations: u64,
}

impl EntityCsvRow {
    /// Rows for every publication of `metrics`, sorted by DOI.
    pub fn from_metrics(metrics: &EntityMetrics) -> Vec<EntityCsvRow> {
        let mut rows: Vec<EntityCsvRow> = metrics
            .per_publication
            .iter()
            .map(|p| EntityCsvRow {
                entity_kind: metrics.entity.kind,
                entity_id: metrics.entity.id.clone(),
                group: metrics.entity.group.clone(),
                doi: p.doi.clone(),
                sources: p.sources.clone(),
                common_citations: p.partition.common.len() as u64,
                unique_citations: p.partition.unique.len() as u64,
                union_citations: p.partition.union_all.len() as u64,
                weighted_citations: p.score.s,
            })
            .collect();
        rows.sort_by(|a, b| a.doi.cmp(&b.doi));
        rows
    }

    fn to_record(&self) -> [String; 9] {
        [
            self.entity_kind.to_string(),
            self.entity_id.clone(),
            self.group.clone(),
            self.doi.to_string(),
            self.sources.iter().cloned().collect::<Vec<_>>().join("+"),
            self.common_citations.to_string(),
            self.unique_citations.to_string(),
            self.union_citations.to_string(),
            self.weighted_citations.to_string(),
        ]
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_io(e: csv::Error) -> ReportError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ReportError::Io(io),
        other => ReportError::Io(io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the entity CSV. A header row is always written, even with no
/// publications.
pub fn write_entity_csv<W: Write>(metrics: &EntityMetrics, out: W) -> Result<(), ReportError> {
    write_entity_rows(&EntityCsvRow::from_metrics(metrics), out)
}

pub fn write_entity_rows<W: Write>(rows: &[EntityCsvRow], out: W) -> Result<(), ReportError> {
    let mut w = csv_writer(out);
    w.write_record(ENTITY_CSV_HEADER).map_err(csv_io)?;
    let mut sorted: Vec<&EntityCsvRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.doi.cmp(&b.doi));
    for row in sorted {
        w.write_record(row.to_record()).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_entity_csv(
    metrics: &EntityMetrics,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let file = BufWriter::new(File::create(path)?);
    write_entity_csv(metrics, file)
}

/// Parses an entity CSV, reporting the first malformed line and column.
pub fn read_entity_csv<R: Read>(input: R) -> Result<Vec<EntityCsvRow>, CsvRowError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(CsvRowError {
                line: 1,
                column: None,
                message: "missing header row".into(),
            })
        }
        Some(r) => r.map_err(|e| csv_parse_error(&e))?,
    };
    if header.iter().ne(ENTITY_CSV_HEADER.iter().copied()) {
        return Err(CsvRowError {
            line: 1,
            column: None,
            message: format!("header must be exactly {}", ENTITY_CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_parse_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(parse_row(&record, line)?);
    }
    Ok(rows)
}

fn csv_parse_error(e: &csv::Error) -> CsvRowError {
    CsvRowError {
        line: e.position().map_or(0, |p| p.line()),
        column: None,
        message: e.to_string(),
    }
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<EntityCsvRow, CsvRowError> {
    let fail = |col: usize, message: String| CsvRowError {
        line,
        column: Some(ENTITY_CSV_HEADER[col].to_string()),
        message,
    };
    let field = |col: usize| record.get(col).unwrap_or("");
    let number = |col: usize| {
        field(col)
            .parse::<u64>()
            .map_err(|e| fail(col, format!("{:?}: {e}", field(col))))
    };
    let entity_kind: EntityKind = field(0).parse().map_err(|e| fail(0, e))?;
    entity_kind
        .validate_id(field(1))
        .map_err(|e| fail(1, e.to_string()))?;
    let doi = normalize_doi(field(3)).map_err(|e| fail(3, e.to_string()))?;
    let sources: BTreeSet<String> = field(4)
        .split('+')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if sources.is_empty() {
        return Err(fail(4, "at least one source is required".into()));
    }
    Ok(EntityCsvRow {
        entity_kind,
        entity_id: field(1).to_string(),
        group: field(2).to_string(),
        doi,
        sources,
        common_citations: number(5)?,
        unique_citations: number(6)?,
        union_citations: number(7)?,
        weighted_citations: number(8)?,
    })
}

/// Conflated totals recoverable from entity CSV rows for a run of
/// `n_sources` databases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSummary {
    pub per_source_articles: BTreeMap<String, u64>,
    pub conflate_articles: u64,
    pub conflate_citations: u64,
    pub conflate_h: u64,
}

pub fn summarize_rows(rows: &[EntityCsvRow], n_sources: usize) -> RowSummary {
    let n = n_sources as u64;
    let mut per_source_articles = BTreeMap::new();
    for row in rows {
        for s in &row.sources {
            *per_source_articles.entry(s.clone()).or_insert(0) += 1;
        }
    }
    let in_all = rows.iter().filter(|r| r.sources.len() == n_sources).count() as u64;
    let common: u64 = rows.iter().map(|r| r.common_citations).sum();
    let unique: u64 = rows.iter().map(|r| r.unique_citations).sum();
    let unions: Vec<u64> = rows.iter().map(|r| r.union_citations).collect();
    RowSummary {
        per_source_articles,
        conflate_articles: WeightedCitationScore::from_counts(
            in_all,
            rows.len() as u64 - in_all,
            n,
        )
        .s,
        conflate_citations: WeightedCitationScore::from_counts(common, unique, n).s,
        conflate_h: h_index(&unions),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least-squares line through `points`, using centered sums.
pub fn least_squares(points: &[(f64, f64)]) -> Result<LinearFit, ReportError> {
    if points.len() < 2 {
        return Err(ReportError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(ReportError::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub entity_kind: EntityKind,
    pub entity_id: String,
    pub group: String,
    pub articles: (u64, u64),
    pub citations: (u64, u64),
    pub h_index: (u64, u64),
}

/// Source-versus-conflate points with a fitted line per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    pub source: String,
    pub points: Vec<ScatterPoint>,
    pub articles_fit: LinearFit,
    pub citations_fit: LinearFit,
    pub h_index_fit: LinearFit,
}

pub fn scatter_data(metrics: &[EntityMetrics], source: &str) -> Result<ScatterData, ReportError> {
    if !metrics
        .iter()
        .any(|m| m.source_names.iter().any(|s| s == source))
    {
        return Err(ReportError::UnknownSource(source.to_string()));
    }
    let points: Vec<ScatterPoint> = metrics
        .iter()
        .map(|m| ScatterPoint {
            entity_kind: m.entity.kind,
            entity_id: m.entity.id.clone(),
            group: m.entity.group.clone(),
            articles: (lookup(&m.per_source_articles, source), m.conflate_articles),
            citations: (
                lookup(&m.per_source_citations, source),
                m.conflate_citations,
            ),
            h_index: (lookup(&m.per_source_h, source), m.conflate_h),
        })
        .collect();
    let fit = |f: fn(&ScatterPoint) -> (u64, u64)| {
        let xy: Vec<(f64, f64)> = points
            .iter()
            .map(|p| {
                let (x, y) = f(p);
                (x as f64, y as f64)
            })
            .collect();
        least_squares(&xy)
    };
    Ok(ScatterData {
        source: source.to_string(),
        articles_fit: fit(|p| p.articles)?,
        citations_fit: fit(|p| p.citations)?,
        h_index_fit: fit(|p| p.h_index)?,
        points,
    })
}

/// Writes [`scatter_data`] for `source` against conflate as JSON.
pub fn export_scatter_data(
    metrics: &[EntityMetrics],
    source: &str,
    path: impl AsRef<Path>,
) -> Result<ScatterData, ReportError> {
    let data = scatter_data(metrics, source)?;
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, &data).map_err(io::Error::other)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(data)
}
