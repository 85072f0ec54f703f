//! Append-only, hash-chained informetric ledgers.
//!
//! One chain exists per entity kind. Each mined block belongs to a single
//! entity (ORCID, organization name or ISSN) and carries ledger entries: a
//! publication DOI as the record and its citing DOIs as transactions.
//!
//! A block is valid when
//! - its SHA-256 digest over the canonical byte layout (see
//!   `docs/ledger-format.md`) equals the stored hash,
//! - the hash has at least `difficulty` leading zero hex digits (all blocks
//!   except genesis),
//! - it links to its predecessor's hash, and
//! - its stored summary equals the summary recomputed from its entries with
//!   the pay-off rule. This last check is the ledger's summation consensus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{h_index, partition};
use crate::model::{DoiId, EntityKind, PublicationRecord, WeightedCitationScore};
use crate::report::EntityCsvRow;

pub const DEFAULT_DIFFICULTY: u32 = 3;
/// Largest difficulty expressible in a 64-hex-digit digest.
pub const MAX_DIFFICULTY: u32 = 64;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("difficulty must be between 1 and {MAX_DIFFICULTY}, got {0}")]
    InvalidDifficulty(u32),
    #[error("nothing to mine: pending entries are empty")]
    EmptyPending,
    #[error("pending entry {index} is invalid: {reason}")]
    InvalidEntry { index: usize, reason: EntryError },
    #[error("block rejected: {0}")]
    Rejected(ChainFailure),
    #[error("chain file {path}: line {line}: {message}")]
    ChainFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error("chain file {path} is invalid: {failure}")]
    InvalidChainFile { path: String, failure: ChainFailure },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 256-bit digest, serialized as 64 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    pub const ZERO: BlockHash = BlockHash([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Strict parse: exactly 64 lowercase hex digits.
    pub fn from_hex(s: &str) -> Result<Self, String> {
        if s.len() != 64
            || !s
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(format!("expected 64 lowercase hex digits, got {s:?}"));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
        Ok(BlockHash(out))
    }

    pub fn leading_zero_hex_digits(&self) -> u32 {
        let mut n = 0;
        for byte in self.0 {
            if byte == 0 {
                n += 2;
            } else {
                if byte < 0x10 {
                    n += 1;
                }
                break;
            }
        }
        n
    }

    pub fn meets_difficulty(&self, difficulty: u32) -> bool {
        self.leading_zero_hex_digits() >= difficulty
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockHash({})", self.to_hex())
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for BlockHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BlockHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A citing work and the sources whose citer lists contain it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitationTransaction {
    pub citer: DoiId,
    pub sources: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntryError {
    #[error("n_sources must be at least 1")]
    ZeroSources,
    #[error("record must list between 1 and n_sources sources")]
    BadSourceCount,
    #[error("common ({common}) + unique ({unique}) != distinct citers ({union})")]
    CountMismatch {
        common: u64,
        unique: u64,
        union: u64,
    },
    #[error("weighted citations {stored} != ceil(common + unique/N) = {expected}")]
    WeightMismatch { stored: u64, expected: u64 },
    #[error("transactions must be sorted by citer with no duplicates")]
    UnsortedTransactions,
    #[error("transaction for {0} has sources outside the record's sources")]
    StrayTransactionSource(DoiId),
    #[error("record cites itself")]
    SelfCitation,
    #[error("transactions imply {common} common and {unique} unique citers")]
    TransactionSplitMismatch { common: u64, unique: u64 },
}

/// One publication committed to the ledger.
///
/// Entries built from a [`PublicationRecord`] carry every citer as a
/// transaction. Entries built from an entity CSV row carry counts only and
/// have no transactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub record_doi: DoiId,
    pub sources: BTreeSet<String>,
    pub n_sources: u32,
    pub transactions: Vec<CitationTransaction>,
    pub common_count: u64,
    pub unique_count: u64,
    pub union_count: u64,
    pub weighted_citations: u64,
}

impl LedgerEntry {
    pub fn from_record(record: &PublicationRecord, n_sources: u32) -> Self {
        let p = partition(record.citers_by_source(), n_sources as usize)
            .expect("record sources fit within n_sources");
        let transactions = p
            .union_all
            .iter()
            .map(|citer| CitationTransaction {
                citer: citer.clone(),
                sources: record
                    .citers_by_source()
                    .iter()
                    .filter(|(_, set)| set.contains(citer))
                    .map(|(s, _)| s.clone())
                    .collect(),
            })
            .collect();
        let score = WeightedCitationScore::from_counts(
            p.common.len() as u64,
            p.unique.len() as u64,
            n_sources as u64,
        );
        Self {
            record_doi: record.doi().clone(),
            sources: record.sources().clone(),
            n_sources,
            transactions,
            common_count: score.s1,
            unique_count: score.unique,
            union_count: p.union_all.len() as u64,
            weighted_citations: score.s,
        }
    }

    /// Counts-only entry from an entity CSV row. Call [`LedgerEntry::check`]
    /// before trusting it.
    pub fn from_csv_row(row: &EntityCsvRow, n_sources: u32) -> Self {
        Self {
            record_doi: row.doi.clone(),
            sources: row.sources.clone(),
            n_sources,
            transactions: Vec::new(),
            common_count: row.common_citations,
            unique_count: row.unique_citations,
            union_count: row.union_citations,
            weighted_citations: row.weighted_citations,
        }
    }

    pub fn expected_weight(&self) -> u64 {
        WeightedCitationScore::from_counts(
            self.common_count,
            self.unique_count,
            self.n_sources.max(1) as u64,
        )
        .s
    }

    pub fn check(&self) -> Result<(), EntryError> {
        if self.n_sources == 0 {
            return Err(EntryError::ZeroSources);
        }
        if self.sources.is_empty() || self.sources.len() > self.n_sources as usize {
            return Err(EntryError::BadSourceCount);
        }
        if self.common_count.checked_add(self.unique_count) != Some(self.union_count) {
            return Err(EntryError::CountMismatch {
                common: self.common_count,
                unique: self.unique_count,
                union: self.union_count,
            });
        }
        let expected = self.expected_weight();
        if self.weighted_citations != expected {
            return Err(EntryError::WeightMismatch {
                stored: self.weighted_citations,
                expected,
            });
        }
        if self.transactions.is_empty() {
            return Ok(());
        }
        if self
            .transactions
            .windows(2)
            .any(|w| w[0].citer >= w[1].citer)
        {
            return Err(EntryError::UnsortedTransactions);
        }
        let mut common = 0u64;
        for tx in &self.transactions {
            if tx.citer == self.record_doi {
                return Err(EntryError::SelfCitation);
            }
            if tx.sources.is_empty() || !tx.sources.is_subset(&self.sources) {
                return Err(EntryError::StrayTransactionSource(tx.citer.clone()));
            }
            if tx.sources.len() == self.n_sources as usize {
                common += 1;
            }
        }
        let unique = self.transactions.len() as u64 - common;
        if self.transactions.len() as u64 != self.union_count
            || common != self.common_count
            || unique != self.unique_count
        {
            return Err(EntryError::TransactionSplitMismatch { common, unique });
        }
        Ok(())
    }
}

/// Totals a block commits to, recomputable from its entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSummary {
    pub common_citations: u64,
    pub unique_citations: u64,
    /// Summed common plus summed unique over `N`, rounded up once. Entries
    /// for different `N` are summed per `N` and the results added.
    pub weighted_citations: u64,
    /// h-index over the entries' distinct citer counts.
    pub h_index: u64,
}

impl BlockSummary {
    pub fn from_entries(entries: &[LedgerEntry]) -> Self {
        let mut by_n: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for e in entries {
            let t = by_n.entry(e.n_sources.max(1)).or_default();
            t.0 += e.common_count;
            t.1 += e.unique_count;
        }
        let unions: Vec<u64> = entries.iter().map(|e| e.union_count).collect();
        Self {
            common_citations: by_n.values().map(|t| t.0).sum(),
            unique_citations: by_n.values().map(|t| t.1).sum(),
            weighted_citations: by_n
                .iter()
                .map(|(&n, &(c, u))| WeightedCitationScore::from_counts(c, u, n as u64).s)
                .sum(),
            h_index: h_index(&unions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp: u64,
    pub ledger_kind: EntityKind,
    pub entity_id: String,
    pub entries: Vec<LedgerEntry>,
    pub summary: BlockSummary,
    pub previous_hash: BlockHash,
    pub nonce: u64,
    pub hash: BlockHash,
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(bytes);
}

fn put_count(buf: &mut Vec<u8>, n: usize) {
    buf.extend_from_slice(&(n as u32).to_be_bytes());
}

impl Block {
    /// Canonical bytes of every field before `nonce`.
    fn header_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(256);
        buf.extend_from_slice(&self.index.to_be_bytes());
        buf.extend_from_slice(&self.timestamp.to_be_bytes());
        buf.push(self.ledger_kind.tag());
        put_bytes(&mut buf, self.entity_id.as_bytes());
        put_count(&mut buf, self.entries.len());
        for e in &self.entries {
            put_bytes(&mut buf, e.record_doi.as_str().as_bytes());
            put_count(&mut buf, e.sources.len());
            for s in &e.sources {
                put_bytes(&mut buf, s.as_bytes());
            }
            buf.extend_from_slice(&e.n_sources.to_be_bytes());
            for n in [
                e.common_count,
                e.unique_count,
                e.union_count,
                e.weighted_citations,
            ] {
                buf.extend_from_slice(&n.to_be_bytes());
            }
            put_count(&mut buf, e.transactions.len());
            for tx in &e.transactions {
                put_bytes(&mut buf, tx.citer.as_str().as_bytes());
                put_count(&mut buf, tx.sources.len());
                for s in &tx.sources {
                    put_bytes(&mut buf, s.as_bytes());
                }
            }
        }
        for n in [
            self.summary.common_citations,
            self.summary.unique_citations,
            self.summary.weighted_citations,
            self.summary.h_index,
        ] {
            buf.extend_from_slice(&n.to_be_bytes());
        }
        buf.extend_from_slice(&self.previous_hash.0);
        buf
    }

    /// Canonical byte layout covering every field except `hash`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut buf = self.header_bytes();
        buf.extend_from_slice(&self.nonce.to_be_bytes());
        buf
    }

    pub fn compute_hash(&self) -> BlockHash {
        BlockHash(Sha256::digest(self.canonical_bytes()).into())
    }

    pub fn is_genesis(&self) -> bool {
        self.index == 0
    }
}

/// Source of block timestamps, in seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    EmptyChain,
    IndexGap {
        expected: u64,
        found: u64,
    },
    MalformedGenesis,
    WrongLedgerKind {
        expected: EntityKind,
        found: EntityKind,
    },
    PreviousHashMismatch,
    HashMismatch,
    DifficultyNotMet,
    EmptyBlock,
    InvalidEntry {
        entry: usize,
        reason: String,
    },
    SummaryMismatch {
        stored: BlockSummary,
        recomputed: BlockSummary,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainFailure {
    pub index: usize,
    pub reason: FailureReason,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {}: {:?}", self.index, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainVerdict {
    pub valid: bool,
    pub first_failure: Option<ChainFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    ledger_kind: EntityKind,
    difficulty: u32,
    blocks: Vec<Block>,
}

fn check_difficulty(difficulty: u32) -> Result<(), LedgerError> {
    if (1..=MAX_DIFFICULTY).contains(&difficulty) {
        Ok(())
    } else {
        Err(LedgerError::InvalidDifficulty(difficulty))
    }
}

pub fn genesis_block(ledger_kind: EntityKind, timestamp: u64) -> Block {
    let mut block = Block {
        index: 0,
        timestamp,
        ledger_kind,
        entity_id: String::new(),
        entries: Vec::new(),
        summary: BlockSummary::default(),
        previous_hash: BlockHash::ZERO,
        nonce: 0,
        hash: BlockHash::ZERO,
    };
    block.hash = block.compute_hash();
    block
}

/// A one-block chain. Genesis is not mined, so chains built with the same
/// kind and timestamp share the same genesis hash.
pub fn genesis(
    ledger_kind: EntityKind,
    difficulty: u32,
    timestamp: u64,
) -> Result<Chain, LedgerError> {
    check_difficulty(difficulty)?;
    Ok(Chain {
        ledger_kind,
        difficulty,
        blocks: vec![genesis_block(ledger_kind, timestamp)],
    })
}

impl Chain {
    /// Wraps blocks without checking them; see [`validate_chain`].
    pub fn from_blocks_unchecked(
        ledger_kind: EntityKind,
        difficulty: u32,
        blocks: Vec<Block>,
    ) -> Self {
        Self {
            ledger_kind,
            difficulty,
            blocks,
        }
    }

    /// Wraps blocks and rejects them unless they form a valid chain.
    pub fn from_blocks(
        ledger_kind: EntityKind,
        difficulty: u32,
        blocks: Vec<Block>,
    ) -> Result<Self, LedgerError> {
        check_difficulty(difficulty)?;
        let chain = Self::from_blocks_unchecked(ledger_kind, difficulty, blocks);
        match validate_chain(&chain).first_failure {
            None => Ok(chain),
            Some(f) => Err(LedgerError::Rejected(f)),
        }
    }

    pub fn ledger_kind(&self) -> EntityKind {
        self.ledger_kind
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn genesis(&self) -> Option<&Block> {
        self.blocks.first()
    }

    /// Appends `block` if it extends the tip validly.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let index = self.blocks.len();
        if let Some(reason) = check_block(&block, self.tip(), index as u64, self) {
            return Err(LedgerError::Rejected(ChainFailure { index, reason }));
        }
        self.blocks.push(block);
        Ok(())
    }
}

/// Checks one block against its predecessor (`None` for genesis).
fn check_block(
    block: &Block,
    previous: Option<&Block>,
    expected_index: u64,
    chain: &Chain,
) -> Option<FailureReason> {
    if block.index != expected_index {
        return Some(FailureReason::IndexGap {
            expected: expected_index,
            found: block.index,
        });
    }
    if block.ledger_kind != chain.ledger_kind {
        return Some(FailureReason::WrongLedgerKind {
            expected: chain.ledger_kind,
            found: block.ledger_kind,
        });
    }
    if block.compute_hash() != block.hash {
        return Some(FailureReason::HashMismatch);
    }
    match previous {
        None => {
            let well_formed = block.previous_hash == BlockHash::ZERO
                && block.entries.is_empty()
                && block.entity_id.is_empty()
                && block.summary == BlockSummary::default();
            if !well_formed {
                return Some(FailureReason::MalformedGenesis);
            }
            return None;
        }
        Some(prev) => {
            if block.previous_hash != prev.hash {
                return Some(FailureReason::PreviousHashMismatch);
            }
        }
    }
    if !block.hash.meets_difficulty(chain.difficulty) {
        return Some(FailureReason::DifficultyNotMet);
    }
    if block.entries.is_empty() {
        return Some(FailureReason::EmptyBlock);
    }
    for (i, entry) in block.entries.iter().enumerate() {
        if let Err(e) = entry.check() {
            return Some(FailureReason::InvalidEntry {
                entry: i,
                reason: e.to_string(),
            });
        }
    }
    let recomputed = BlockSummary::from_entries(&block.entries);
    if recomputed != block.summary {
        return Some(FailureReason::SummaryMismatch {
            stored: block.summary,
            recomputed,
        });
    }
    None
}

/// Checks every block in order and reports the first failure.
pub fn validate_chain(chain: &Chain) -> ChainVerdict {
    let failure = if chain.blocks.is_empty() {
        Some(ChainFailure {
            index: 0,
            reason: FailureReason::EmptyChain,
        })
    } else {
        chain.blocks.iter().enumerate().find_map(|(i, block)| {
            let previous = i.checked_sub(1).map(|p| &chain.blocks[p]);
            check_block(block, previous, i as u64, chain)
                .map(|reason| ChainFailure { index: i, reason })
        })
    };
    ChainVerdict {
        valid: failure.is_none(),
        first_failure: failure,
    }
}

/// Mines a block on top of `chain` holding `pending`, searching nonces
/// upward from zero.
pub fn mine_block(
    chain: &Chain,
    pending: Vec<LedgerEntry>,
    entity_id: &str,
    clock: &dyn Clock,
) -> Result<Block, LedgerError> {
    if pending.is_empty() {
        return Err(LedgerError::EmptyPending);
    }
    for (index, entry) in pending.iter().enumerate() {
        entry
            .check()
            .map_err(|reason| LedgerError::InvalidEntry { index, reason })?;
    }
    let tip = chain.tip().ok_or(LedgerError::Rejected(ChainFailure {
        index: 0,
        reason: FailureReason::EmptyChain,
    }))?;
    let mut block = Block {
        index: tip.index + 1,
        timestamp: clock.now(),
        ledger_kind: chain.ledger_kind,
        entity_id: entity_id.to_string(),
        summary: BlockSummary::from_entries(&pending),
        entries: pending,
        previous_hash: tip.hash,
        nonce: 0,
        hash: BlockHash::ZERO,
    };
    let mut prefix = Sha256::new();
    prefix.update(block.header_bytes());
    for nonce in 0u64.. {
        let mut hasher = prefix.clone();
        hasher.update(nonce.to_be_bytes());
        let hash = BlockHash(hasher.finalize().into());
        if hash.meets_difficulty(chain.difficulty) {
            block.nonce = nonce;
            block.hash = hash;
            break;
        }
    }
    Ok(block)
}

/// Longest valid chain among `local` and `candidates`.
///
/// Candidates with a different genesis block, ledger kind or difficulty are
/// ignored, as are invalid ones. Ties keep the local chain.
pub fn resolve(local: &Chain, candidates: &[Chain]) -> Chain {
    let mut best = local;
    for candidate in candidates {
        let compatible = candidate.ledger_kind == local.ledger_kind
            && candidate.difficulty == local.difficulty
            && candidate.genesis().is_some()
            && candidate.genesis() == local.genesis();
        if compatible && candidate.len() > best.len() && validate_chain(candidate).valid {
            best = candidate;
        }
    }
    best.clone()
}

/// Serializes one block as a single JSON line, without the trailing newline.
pub fn block_to_line(block: &Block) -> String {
    serde_json::to_string(block).expect("blocks always serialize")
}

pub fn block_from_line(line: &str) -> Result<Block, serde_json::Error> {
    serde_json::from_str(line)
}

/// Rewrites `path` with one block per line.
pub fn save_chain(chain: &Chain, path: impl AsRef<Path>) -> Result<(), LedgerError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for block in &chain.blocks {
            writeln!(out, "{}", block_to_line(block))?;
        }
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn append_block_line(block: &Block, path: impl AsRef<Path>) -> Result<(), LedgerError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", block_to_line(block))?;
    Ok(())
}

/// Loads and validates a chain file written by [`save_chain`].
pub fn load_chain(
    path: impl AsRef<Path>,
    ledger_kind: EntityKind,
    difficulty: u32,
) -> Result<Chain, LedgerError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut blocks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let block = block_from_line(&line).map_err(|e| LedgerError::ChainFile {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        blocks.push(block);
    }
    check_difficulty(difficulty)?;
    let chain = Chain::from_blocks_unchecked(ledger_kind, difficulty, blocks);
    match validate_chain(&chain).first_failure {
        None => Ok(chain),
        Some(failure) => Err(LedgerError::InvalidChainFile {
            path: path.display().to_string(),
            failure,
        }),
    }
}
