//! Request and response bodies exchanged with a ledger node.

use conflate_core::ledger::{Block, BlockHash, Chain, LedgerEntry};
use conflate_core::model::EntityKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileAccepted {
    pub accepted: usize,
    pub pending: usize,
}

/// JSON form of a profile post, for clients that hold full citer-level
/// entries rather than the entity CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntries {
    pub entity_id: String,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockView {
    pub index: u64,
    pub hash: BlockHash,
    pub previous_hash: BlockHash,
    pub timestamp: u64,
    pub entity_id: String,
    pub nonce: u64,
    pub entries: usize,
    pub common_citations: u64,
    pub unique_citations: u64,
    pub weighted_citations: u64,
    pub h_index: u64,
}

impl From<&Block> for BlockView {
    fn from(b: &Block) -> Self {
        Self {
            index: b.index,
            hash: b.hash,
            previous_hash: b.previous_hash,
            timestamp: b.timestamp,
            entity_id: b.entity_id.clone(),
            nonce: b.nonce,
            entries: b.entries.len(),
            common_citations: b.summary.common_citations,
            unique_citations: b.summary.unique_citations,
            weighted_citations: b.summary.weighted_citations,
            h_index: b.summary.h_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineResponse {
    pub blocks: Vec<BlockView>,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainResponse {
    pub ledger_kind: EntityKind,
    pub difficulty: u32,
    pub length: usize,
    pub blocks: Vec<Block>,
}

impl ChainResponse {
    pub fn from_chain(chain: &Chain) -> Self {
        Self {
            ledger_kind: chain.ledger_kind(),
            difficulty: chain.difficulty(),
            length: chain.len(),
            blocks: chain.blocks().to_vec(),
        }
    }

    /// Unvalidated chain built from the response.
    pub fn into_chain(self) -> Chain {
        Chain::from_blocks_unchecked(self.ledger_kind, self.difficulty, self.blocks)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeersRequest {
    pub peers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeersResponse {
    pub peers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPeer {
    pub peer: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResyncResponse {
    pub replaced: bool,
    pub length: usize,
    pub skipped: Vec<SkippedPeer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingResponse {
    pub count: usize,
    pub entity_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}
