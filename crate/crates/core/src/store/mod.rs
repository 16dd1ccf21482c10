//! Embedded per-user behaviour sequence store: an in-memory index over
//! column-packed blocks on disk, an in-memory tail of recent events backed by
//! a journal, and a per-user merge that rewrites one block at a time.

mod codec;
mod journal;
mod schema;
mod vault;

use std::path::PathBuf;

pub use codec::{
    pack_block, pack_payload, put_varint, string_baseline_encode, unpack_block, unpack_payload, unzigzag, zigzag,
    BlockHeader, BLOCK_HEADER_LEN, BLOCK_TRAILER_LEN,
};
pub use journal::{encode_record, Journal, JournalRecord, JOURNAL_MAGIC, JOURNAL_VERSION};
pub use schema::{BehaviorEvent, FieldKind, FieldSpec, SequenceSchema, Value};
pub use vault::{Extent, IoCounters, MergeStats, StoreHandle, StoreStats, SEGMENT_MAGIC, SEGMENT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema mismatch: expected hash {expected:016x}, store has {found:016x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("corrupt header in {file}: {reason}")]
    CorruptHeader { file: PathBuf, reason: String },
    #[error("corrupt block (user {user_id}, seqno {seqno}): {reason}")]
    Corrupt { user_id: u64, seqno: u64, reason: String },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("disk full")]
    DiskFull,
    #[error("injected crash at {0:?}")]
    InjectedCrash(FaultPoint),
    #[error("store handle is poisoned by an earlier crash")]
    Poisoned,
    #[error("store is closed")]
    Closed,
}

/// Test hooks for crash and error injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Half of a journal record reaches the file; the append is not acknowledged.
    JournalTornWrite,
    /// Merge crashes before writing its block.
    BeforeBlockWrite,
    /// Half of the merged block reaches the file.
    TornBlockWrite,
    /// Block written and synced, crash before the index is repointed.
    AfterBlockWrite,
    /// Index repointed, crash before the journal is compacted.
    AfterRepoint,
    /// The block write fails cleanly with no space; not a crash.
    DiskFull,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreConfig {
    /// A user's tail is merged before it would exceed this many events.
    pub max_tail_events: usize,
    /// Oldest events beyond this count are dropped at merge.
    pub max_history_events: Option<usize>,
    /// A new segment file is started once the active one would pass this size.
    pub segment_bytes: u64,
    /// fsync the journal after every append.
    pub sync_journal: bool,
    /// Stale journal records tolerated before compaction on the append path.
    pub journal_compact_records: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            max_tail_events: 256,
            max_history_events: None,
            segment_bytes: 64 << 20,
            sync_journal: false,
            journal_compact_records: 65_536,
        }
    }
}
