//! Append-only log of acknowledged events not yet merged to disk.
//!
//! Layout: `"SQJL" | version u16 | schema_hash u64`, then records
//! `len u32 | crc32(body) u32 | body` with
//! `body = user_id u64 | base_seqno u64 | packed single event`.
//! `base_seqno` is the seqno of the user's disk block when the event was
//! appended; a record is stale once a block with a higher seqno exists.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::codec::{pack_payload, unpack_payload, Reader};
use super::schema::{BehaviorEvent, SequenceSchema};
use super::StoreError;

pub const JOURNAL_MAGIC: &[u8; 4] = b"SQJL";
pub const JOURNAL_VERSION: u16 = 1;
const HEADER_LEN: u64 = 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalRecord {
    pub user_id: u64,
    pub base_seqno: u64,
    pub event: BehaviorEvent,
}

pub fn encode_record(schema: &SequenceSchema, rec: &JournalRecord) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&rec.user_id.to_le_bytes());
    body.extend_from_slice(&rec.base_seqno.to_le_bytes());
    body.extend_from_slice(&pack_payload(schema, std::slice::from_ref(&rec.event)));
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

fn header(schema: &SequenceSchema) -> Vec<u8> {
    let mut h = JOURNAL_MAGIC.to_vec();
    h.extend_from_slice(&JOURNAL_VERSION.to_le_bytes());
    h.extend_from_slice(&schema.schema_hash().to_le_bytes());
    h
}

pub struct Journal {
    path: PathBuf,
    file: File,
    len: u64,
    records: u64,
}

impl Journal {
    /// Opens or creates the journal, returning its intact records. A torn or
    /// corrupt suffix is cut off.
    pub fn open(path: &Path, schema: &SequenceSchema) -> Result<(Self, Vec<JournalRecord>), StoreError> {
        if !path.exists() {
            return Ok((Self::create(path, schema, &[])?, Vec::new()));
        }
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let bad_header = |reason: String| StoreError::CorruptHeader {
            file: path.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN as usize || &bytes[..4] != JOURNAL_MAGIC {
            return Err(bad_header("missing SQJL magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != JOURNAL_VERSION {
            return Err(bad_header(format!("unsupported version {version}")));
        }
        let hash = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        if hash != schema.schema_hash() {
            return Err(StoreError::SchemaMismatch {
                expected: schema.schema_hash(),
                found: hash,
            });
        }
        let mut records = Vec::new();
        let mut pos = HEADER_LEN as usize;
        while let Some(rec) = parse_record(schema, &bytes[pos..]) {
            let (rec, used) = rec;
            records.push(rec);
            pos += used;
        }
        let file = OpenOptions::new().write(true).open(path)?;
        if pos < bytes.len() {
            file.set_len(pos as u64)?;
            file.sync_data()?;
        }
        let journal = Self {
            path: path.to_path_buf(),
            file,
            len: pos as u64,
            records: records.len() as u64,
        };
        Ok((journal, records))
    }

    /// Atomically replaces the journal with exactly `records`.
    pub fn create(path: &Path, schema: &SequenceSchema, records: &[JournalRecord]) -> Result<Self, StoreError> {
        let tmp = path.with_extension("wal.tmp");
        let mut buf = header(schema);
        for r in records {
            buf.extend_from_slice(&encode_record(schema, r));
        }
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            File::open(dir)?.sync_all()?;
        }
        let file = OpenOptions::new().write(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            len: buf.len() as u64,
            records: records.len() as u64,
        })
    }

    /// Writes `bytes` (one encoded record) at the end.
    pub fn append_raw(&mut self, bytes: &[u8], sync: bool) -> Result<(), StoreError> {
        use std::os::unix::fs::FileExt;
        self.file.write_all_at(bytes, self.len)?;
        if sync {
            self.file.sync_data()?;
        }
        self.len += bytes.len() as u64;
        self.records += 1;
        Ok(())
    }

    pub fn len_bytes(&self) -> u64 {
        self.len
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn parse_record(schema: &SequenceSchema, buf: &[u8]) -> Option<(JournalRecord, usize)> {
    let mut r = Reader::new(buf);
    let len = r.u32().ok()? as usize;
    let crc = r.u32().ok()?;
    let body = r.take(len).ok()?;
    if crc32fast::hash(body) != crc {
        return None;
    }
    let mut b = Reader::new(body);
    let user_id = b.u64().ok()?;
    let base_seqno = b.u64().ok()?;
    let mut events = unpack_payload(schema, b.rest(), 1).ok()?;
    schema.check(&events[0]).ok()?;
    Some((
        JournalRecord {
            user_id,
            base_seqno,
            event: events.pop()?,
        },
        8 + len,
    ))
}
