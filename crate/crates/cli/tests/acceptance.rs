//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use axum::routing::get;
use axum::{Json, Router};
use common::*;
use conflate_core::engine::{
    conflate_entity, conflate_from_snapshots, h_index, partition, weighted_score,
};
use conflate_core::ingest::{filter, DatabaseSnapshot, RawCiter, RawPublication, SnapshotEntity};
use conflate_core::ledger::{
    self, genesis, mine_block, validate_chain, Block, Chain, FailureReason, FixedClock, LedgerEntry,
};
use conflate_core::model::{
    normalize_doi, DoiId, EntityKind, EntityMetrics, EntityRef, PublicationRecord,
};
use conflate_core::report::{
    aggregate, export_entity_csv, read_entity_csv, summarize_rows, write_entity_rows, EntityCsvRow,
};
use conflate_node::api::ChainResponse;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    ensure!(elapsed < limit, "took {elapsed:?}, limit {limit:?}");
    Ok(String::new())
}

fn doi(s: &str) -> DoiId {
    normalize_doi(s).unwrap()
}

fn citers(names: &[&str]) -> BTreeSet<DoiId> {
    names
        .iter()
        .map(|n| doi(&format!("10.9999/citer.{n}")))
        .collect()
}

fn author(id: &str, group: &str) -> EntityRef {
    EntityRef::new(EntityKind::Author, id, group).unwrap()
}

/// The three worked examples of two-source weighting: 3 citers in one
/// database only, 2 common plus one unique each side, all 3 in common.
fn worked_examples_exactness() -> Outcome {
    let cases: [(&[&str], &[&str], u64); 3] = [
        (&["a", "b", "c"], &[], 2),
        (&["a", "b", "c"], &["a", "b", "d"], 3),
        (&["a", "b", "c"], &["a", "b", "c"], 3),
    ];
    let names = vec!["scopus".to_string(), "wos".to_string()];
    let mut got = Vec::new();
    let mut slowest = Duration::ZERO;
    for (scopus, wos, expected) in cases {
        let mut by_source = BTreeMap::from([("scopus".to_string(), citers(scopus))]);
        if !wos.is_empty() {
            by_source.insert("wos".to_string(), citers(wos));
        }
        let sources = by_source.keys().cloned().collect();
        let record =
            PublicationRecord::new(doi("10.1/example"), sources, by_source.clone()).unwrap();
        let start = Instant::now();
        let per_pub = weighted_score(&partition(&by_source, 2).unwrap()).s;
        let m = conflate_entity(author(ORCID, "Sciences"), &[record], &names).unwrap();
        slowest = slowest.max(start.elapsed());
        ensure!(
            m.conflate_citations == expected && per_pub == expected,
            "expected {expected}, entity total {} publication {per_pub}",
            m.conflate_citations
        );
        got.push(m.conflate_citations);
    }
    within(slowest, Duration::from_millis(1))?;
    Ok(format!("weighted citations {got:?}, slowest {slowest:?}"))
}

fn random_two_source(rng: &mut StdRng) -> (Vec<DatabaseSnapshot>, u64, u64) {
    let (mut c1, mut c2) = (0u64, 0u64);
    let mut pubs: [Vec<RawPublication>; 2] = [Vec::new(), Vec::new()];
    for p in 0..rng.gen_range(0..10) {
        let present = match rng.gen_range(0..4) {
            0 => [true, false],
            1 => [false, true],
            _ => [true, true],
        };
        for (s, here) in present.iter().enumerate() {
            if !here {
                continue;
            }
            let set: BTreeSet<u32> = (0..rng.gen_range(0..12))
                .map(|_| rng.gen_range(0..20))
                .collect();
            if s == 0 {
                c1 += set.len() as u64;
            } else {
                c2 += set.len() as u64;
            }
            pubs[s].push(RawPublication {
                doi: Some(format!("10.1/p{p}")),
                citers: set
                    .iter()
                    .map(|c| RawCiter {
                        doi: Some(format!("10.2/c{c}")),
                    })
                    .collect(),
            });
        }
    }
    let snaps = ["scopus", "wos"]
        .iter()
        .zip(pubs)
        .map(|(name, publications)| DatabaseSnapshot {
            source_name: name.to_string(),
            entities: vec![SnapshotEntity {
                entity: author(ORCID, "Sciences"),
                publications,
            }],
        })
        .collect();
    (snaps, c1, c2)
}

fn two_source_mean_identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let key = author(ORCID, "").key();
    let fixtures: Vec<_> = (0..1000).map(|_| random_two_source(&mut rng)).collect();
    let start = Instant::now();
    for (i, (snaps, c1, c2)) in fixtures.into_iter().enumerate() {
        let filtered: Vec<_> = snaps.into_iter().map(filter).collect();
        let m = conflate_from_snapshots(&filtered, &key).unwrap();
        let expected = (c1 + c2).div_ceil(2);
        ensure!(
            m.conflate_citations == expected,
            "fixture {i}: got {}, ceil(({c1}+{c2})/2) = {expected}",
            m.conflate_citations
        );
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("1000 fixtures in {elapsed:?}"))
}

fn h_oracle(counts: &[u64]) -> u64 {
    (0..=counts.len() as u64)
        .filter(|&h| counts.iter().filter(|&&c| c >= h).count() as u64 >= h)
        .max()
        .unwrap()
}

fn h_index_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let samples: Vec<Vec<u64>> = (0..10_000)
        .map(|_| {
            (0..rng.gen_range(0..=50))
                .map(|_| rng.gen_range(0..=100))
                .collect()
        })
        .collect();
    let start = Instant::now();
    let got: Vec<u64> = samples.iter().map(|s| h_index(s)).collect();
    let elapsed = start.elapsed();
    for (s, h) in samples.iter().zip(&got) {
        ensure!(
            *h == h_oracle(s),
            "h_index({s:?}) = {h}, definition gives {}",
            h_oracle(s)
        );
    }
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("10000 samples in {elapsed:?}"))
}

fn partition_laws() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    for i in 0..10_000 {
        let n = rng.gen_range(1..=4);
        let present = rng.gen_range(1..=n);
        let map: BTreeMap<String, BTreeSet<DoiId>> = (0..present)
            .map(|s| {
                let set = (0..rng.gen_range(0..10))
                    .map(|_| doi(&format!("10.3/c{}", rng.gen_range(0..15))))
                    .collect();
                (format!("db{s}"), set)
            })
            .collect();
        let p = partition(&map, n).unwrap();
        let all: BTreeSet<DoiId> = map.values().flatten().cloned().collect();
        let in_every: BTreeSet<DoiId> = if present == n {
            all.iter()
                .filter(|d| map.values().all(|s| s.contains(*d)))
                .cloned()
                .collect()
        } else {
            BTreeSet::new()
        };
        ensure!(
            p.common.is_disjoint(&p.unique),
            "trial {i}: common and unique overlap"
        );
        ensure!(
            p.common.union(&p.unique).cloned().collect::<BTreeSet<_>>() == all
                && p.union_all == all,
            "trial {i}: union not reconstructed"
        );
        ensure!(
            p.common == in_every,
            "trial {i}: common is not the all-source set"
        );
    }
    Ok("10000 partitions".into())
}

fn random_records(rng: &mut StdRng, count: usize, tag: &str) -> Vec<PublicationRecord> {
    (0..count)
        .map(|i| {
            let mut by_source = BTreeMap::new();
            for s in ["scopus", "wos"] {
                if rng.gen_bool(0.75) || by_source.is_empty() && s == "wos" {
                    let set = (0..rng.gen_range(0..15))
                        .map(|_| doi(&format!("10.4/c{}", rng.gen_range(0..40))))
                        .collect();
                    by_source.insert(s.to_string(), set);
                }
            }
            let sources = by_source.keys().cloned().collect();
            PublicationRecord::new(doi(&format!("10.5/{tag}-{i}")), sources, by_source).unwrap()
        })
        .collect()
}

fn remine(block: &mut Block, difficulty: u32) {
    block.nonce = 0;
    loop {
        let hash = block.compute_hash();
        if hash.meets_difficulty(difficulty) {
            block.hash = hash;
            return;
        }
        block.nonce += 1;
    }
}

fn ten_block_chain(rng: &mut StdRng) -> Chain {
    let mut chain = genesis(EntityKind::Author, 2, 0).unwrap();
    for t in 1..10 {
        let n = rng.gen_range(1..=3);
        let entries = random_records(rng, n, &format!("b{t}"))
            .iter()
            .map(|r| LedgerEntry::from_record(r, 2))
            .collect();
        let block = mine_block(&chain, entries, ORCID, &FixedClock(t)).unwrap();
        chain.append(block).unwrap();
    }
    chain
}

fn tamper_detection() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(9);
    let chain = ten_block_chain(&mut rng);
    ensure!(
        chain.len() == 10 && validate_chain(&chain).valid,
        "fixture chain invalid"
    );
    let lines: Vec<String> = chain.blocks().iter().map(ledger::block_to_line).collect();

    let trials = 1000;
    let (mut unparseable, mut invalid) = (0, 0);
    for t in 0..trials {
        let bi = t % lines.len();
        let mut bytes = lines[bi].clone().into_bytes();
        let pos = rng.gen_range(0..bytes.len());
        bytes[pos] ^= rng.gen_range(1..=255u8);
        let parsed = String::from_utf8(bytes)
            .ok()
            .and_then(|l| ledger::block_from_line(&l).ok());
        match parsed {
            None => unparseable += 1,
            Some(block) => {
                let mut blocks = chain.blocks().to_vec();
                blocks[bi] = block;
                let tampered = Chain::from_blocks_unchecked(EntityKind::Author, 2, blocks);
                ensure!(
                    !validate_chain(&tampered).valid,
                    "mutation of block {bi} byte {pos} passed validation"
                );
                invalid += 1;
            }
        }
    }

    // Digit-for-digit and hex-for-hex swaps keep the line parseable, so
    // these all reach chain validation.
    let mut swapped = 0;
    while swapped < 500 {
        let bi = rng.gen_range(0..lines.len());
        let mut bytes = lines[bi].clone().into_bytes();
        let pos = rng.gen_range(0..bytes.len());
        let alphabet: &[u8] = match bytes[pos] {
            b'0'..=b'9' => b"0123456789",
            b'a'..=b'f' => b"abcdef",
            _ => continue,
        };
        let replacement = alphabet[rng.gen_range(0..alphabet.len())];
        if replacement == bytes[pos] {
            continue;
        }
        bytes[pos] = replacement;
        let Ok(block) = ledger::block_from_line(std::str::from_utf8(&bytes).unwrap()) else {
            unparseable += 1;
            swapped += 1;
            continue;
        };
        let mut blocks = chain.blocks().to_vec();
        blocks[bi] = block;
        let tampered = Chain::from_blocks_unchecked(EntityKind::Author, 2, blocks);
        ensure!(
            !validate_chain(&tampered).valid,
            "swap in block {bi} byte {pos} passed validation"
        );
        invalid += 1;
        swapped += 1;
    }

    // Summary-only edits with fresh proof-of-work and relinked successors:
    // only the summation re-check can catch these.
    let mut summary_caught = 0;
    for bi in 1..chain.len() {
        for field in 0..2 {
            let mut blocks = chain.blocks().to_vec();
            if field == 0 {
                blocks[bi].summary.weighted_citations += 1;
            } else {
                blocks[bi].summary.h_index += 1;
            }
            for j in bi..blocks.len() {
                if j > bi {
                    blocks[j].previous_hash = blocks[j - 1].hash;
                }
                remine(&mut blocks[j], 2);
            }
            let tampered = Chain::from_blocks_unchecked(EntityKind::Author, 2, blocks);
            let verdict = validate_chain(&tampered);
            let failure = verdict
                .first_failure
                .ok_or("summary tamper passed validation")?;
            ensure!(
                failure.index == bi
                    && matches!(failure.reason, FailureReason::SummaryMismatch { .. }),
                "summary tamper at {bi} reported as {failure}"
            );
            summary_caught += 1;
        }
    }
    let total = trials + swapped;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!(
        "{total}/{total} byte mutations flagged ({unparseable} unparseable, {invalid} invalid), \
         {summary_caught}/{summary_caught} re-mined summary edits caught, {elapsed:?}"
    ))
}

fn csv_file(dir: &std::path::Path, name: &str, rows: &[String]) -> String {
    let p = dir.join(name);
    fs::write(&p, csv_body(rows)).unwrap();
    p.to_str().unwrap().to_string()
}

fn chain_of(node: &ServeProcess) -> Result<ChainResponse, String> {
    let out = node.cli(&["chain", "--json"]);
    ensure!(out.status.success(), "chain fetch failed");
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn expect_stdout(out: std::process::Output, expected: &str) -> Outcome {
    let text = stdout(&out);
    ensure!(
        out.status.success() && text.starts_with(expected),
        "expected {expected:?}, got {text:?} (status {:?}, stderr {})",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(text)
}

fn three_node_resync() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = ServeProcess::start(&["--clock", "1700000000"]);
    let b = ServeProcess::start(&[]);
    let c = ServeProcess::start(&[]);

    for i in 0..3 {
        let csv = csv_file(
            dir.path(),
            &format!("a{i}.csv"),
            &[csv_row(&format!("10.6/a{i}"), "scopus+wos", 2, 2, 3)],
        );
        expect_stdout(a.cli(&["post", &csv]), "accepted=1")?;
        expect_stdout(a.cli(&["mine"]), "block index=")?;
    }
    let a_chain = chain_of(&a)?;
    ensure!(a_chain.length == 4, "A has length {}", a_chain.length);

    for node in [&b, &c] {
        expect_stdout(node.cli(&["peers", &a.url]), &a.url)?;
        expect_stdout(node.cli(&["resync"]), "replaced=true length=4")?;
        ensure!(
            chain_of(node)?.blocks == a_chain.blocks,
            "resynced chain differs from A"
        );
        expect_stdout(node.cli(&["resync"]), "replaced=false length=4")?;
    }

    // A fourth peer serves a longer chain with one byte changed.
    let mut longer = a_chain.clone().into_chain();
    let extra = csv_row("10.6/extra", "scopus", 0, 1, 1);
    let row = read_entity_csv(csv_body(&[extra]).as_bytes())
        .unwrap()
        .remove(0);
    let block = mine_block(
        &longer,
        vec![LedgerEntry::from_csv_row(&row, 2)],
        ORCID,
        &FixedClock(1),
    )
    .unwrap();
    longer.append(block).unwrap();
    let mut blocks = longer.blocks().to_vec();
    let line = ledger::block_to_line(&blocks[2]);
    let at = line.find("\"nonce\":").unwrap() + "\"nonce\":".len();
    let mut bytes = line.into_bytes();
    bytes[at] = if bytes[at] == b'9' { b'8' } else { b'9' };
    blocks[2] =
        ledger::block_from_line(std::str::from_utf8(&bytes).unwrap()).map_err(|e| e.to_string())?;
    let tampered = Chain::from_blocks_unchecked(EntityKind::Author, 2, blocks);
    ensure!(
        !validate_chain(&tampered).valid,
        "tamper fixture still validates"
    );

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let body = ChainResponse::from_chain(&tampered);
    let d_url = rt.block_on(async {
        let app = Router::new().route("/chain", get(move || async move { Json(body.clone()) }));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        format!("http://{addr}")
    });
    expect_stdout(b.cli(&["peers", &d_url]), "")?;
    expect_stdout(b.cli(&["resync"]), "replaced=false length=4")?;
    ensure!(chain_of(&b)?.blocks == a_chain.blocks, "B lost A's chain");

    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "B and C adopted length 4, tampered length-5 peer ignored, {elapsed:?}"
    ))
}

fn csv_round_trip() -> Outcome {
    let mut rng = StdRng::seed_from_u64(10);
    let names = vec!["scopus".to_string(), "wos".to_string()];
    let records = random_records(&mut rng, 50, "rt");
    let m = conflate_entity(author(ORCID, "Sciences"), &records, &names).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("entity.csv");
    export_entity_csv(&m, &path).map_err(|e| e.to_string())?;
    let first = fs::read(&path).unwrap();
    let rows = read_entity_csv(first.as_slice()).map_err(|e| e.to_string())?;
    ensure!(rows.len() == 50, "{} rows", rows.len());
    ensure!(
        rows == EntityCsvRow::from_metrics(&m),
        "imported rows differ"
    );
    let mut second = Vec::new();
    write_entity_rows(&rows, &mut second).map_err(|e| e.to_string())?;
    ensure!(first == second, "re-export is not byte identical");
    let s = summarize_rows(&rows, 2);
    ensure!(
        (s.conflate_articles, s.conflate_citations, s.conflate_h)
            == (m.conflate_articles, m.conflate_citations, m.conflate_h),
        "recomputed summary {s:?} differs"
    );
    for (src, n) in &m.per_source_articles {
        ensure!(
            s.per_source_articles.get(src).copied().unwrap_or(0) == *n,
            "{src} articles differ"
        );
    }
    Ok(format!(
        "50 rows, {} bytes identical, conflate {}/{}/{}",
        first.len(),
        m.conflate_articles,
        m.conflate_citations,
        m.conflate_h
    ))
}

fn aggregation_conservation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(11);
    let names = vec!["scopus".to_string(), "wos".to_string()];
    let metrics: Vec<EntityMetrics> = (0..20)
        .map(|i| {
            let id = format!("0000-0003-0000-{i:04}");
            let n = rng.gen_range(0..8);
            let records = random_records(&mut rng, n, &id);
            conflate_entity(author(&id, &format!("group{}", i % 4)), &records, &names).unwrap()
        })
        .collect();
    let groups = aggregate(&metrics, |m| m.entity.group.clone()).map_err(|e| e.to_string())?;
    ensure!(groups.len() == 4, "{} groups", groups.len());
    ensure!(
        groups.iter().map(|g| g.entities).sum::<usize>() == 20,
        "entity count not conserved"
    );
    let total = |f: &dyn Fn(&EntityMetrics) -> u64| metrics.iter().map(f).sum::<u64>();
    ensure!(
        groups.iter().map(|g| g.articles.conflate).sum::<u64>() == total(&|m| m.conflate_articles),
        "conflate articles not conserved"
    );
    ensure!(
        groups.iter().map(|g| g.citations.conflate).sum::<u64>()
            == total(&|m| m.conflate_citations),
        "conflate citations not conserved"
    );
    for s in &names {
        ensure!(
            groups.iter().map(|g| g.articles.per_source[s]).sum::<u64>()
                == total(&|m| m.per_source_articles[s]),
            "{s} articles not conserved"
        );
        ensure!(
            groups
                .iter()
                .map(|g| g.citations.per_source[s])
                .sum::<u64>()
                == total(&|m| m.per_source_citations[s]),
            "{s} citations not conserved"
        );
    }
    Ok(format!(
        "20 entities, 4 groups, conflate citations {}",
        total(&|m| m.conflate_citations)
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("worked examples exactness", worked_examples_exactness),
        ("N=2 mean identity", two_source_mean_identity),
        ("h-index oracle", h_index_oracle),
        ("partition laws", partition_laws),
        ("tamper detection", tamper_detection),
        ("three-node resync", three_node_resync),
        ("CSV round-trip", csv_round_trip),
        ("aggregation conservation", aggregation_conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{}] {name}: {reason}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
