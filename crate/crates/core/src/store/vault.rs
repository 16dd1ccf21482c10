use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use super::codec::{pack_block, unpack_block, BlockHeader, BLOCK_HEADER_LEN};
use super::journal::{encode_record, Journal, JournalRecord};
use super::schema::{BehaviorEvent, SequenceSchema};
use super::{FaultPoint, StoreConfig, StoreError};

pub const SEGMENT_MAGIC: &[u8; 4] = b"SQVT";
pub const SEGMENT_VERSION: u16 = 1;
const SEGMENT_HEADER_LEN: u64 = 14;
const SCHEMA_FILE: &str = "schema.json";
const JOURNAL_FILE: &str = "journal.wal";

/// Location of a user's packed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub file_id: u32,
    pub offset: u64,
    pub length: u32,
    pub event_count: u32,
    pub seqno: u64,
}

#[derive(Debug, Default, Clone)]
struct Entry {
    extent: Option<Extent>,
    /// Unmerged events, newest first, unique by key.
    tail: Vec<BehaviorEvent>,
}

struct SegmentFile {
    file: Arc<File>,
    live: u64,
}

#[derive(Default)]
struct Index {
    users: HashMap<u64, Entry>,
    files: BTreeMap<u32, SegmentFile>,
    tail_events: usize,
}

struct Active {
    id: u32,
    file: Arc<File>,
    size: u64,
}

struct Writer {
    journal: Journal,
    active: Option<Active>,
    next_seqno: u64,
    fault: Option<(FaultPoint, u32)>,
}

const OPEN: u8 = 0;
const POISONED: u8 = 1;
const CLOSED: u8 = 2;

struct Shared {
    dir: PathBuf,
    schema: SequenceSchema,
    config: StoreConfig,
    index: RwLock<Index>,
    writer: Mutex<Writer>,
    state: AtomicU8,
    extent_reads: AtomicU64,
    bytes_read: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub disk_bytes: u64,
    pub live_bytes: u64,
    pub index_entries: u64,
    pub tail_events: u64,
    pub journal_bytes: u64,
    pub segment_files: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub users_merged: u64,
    pub events_written: u64,
    pub bytes_written: u64,
    pub users_failed: u64,
    pub files_deleted: u64,
}

/// Disk reads issued by `get_last_n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounters {
    pub extent_reads: u64,
    pub bytes_read: u64,
}

/// Shareable handle to an open store directory.
#[derive(Clone)]
pub struct StoreHandle {
    shared: Arc<Shared>,
}

fn segment_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("seg-{id:08}.sqv"))
}

fn parse_segment_name(name: &str) -> Option<u32> {
    name.strip_prefix("seg-")?.strip_suffix(".sqv")?.parse().ok()
}

struct Scanned {
    id: u32,
    file: File,
    size: u64,
    blocks: Vec<(BlockHeader, u64)>,
}

fn scan_segment(path: &Path, id: u32, schema: &SequenceSchema) -> Result<Option<Scanned>, StoreError> {
    let file = OpenOptions::new().read(true).write(true).open(path)?;
    let len = file.metadata()?.len();
    if len < SEGMENT_HEADER_LEN {
        // crashed while being created; it never held a block
        drop(file);
        fs::remove_file(path)?;
        return Ok(None);
    }
    let mut head = [0u8; SEGMENT_HEADER_LEN as usize];
    file.read_exact_at(&mut head, 0)?;
    let bad = |reason: String| StoreError::CorruptHeader {
        file: path.to_path_buf(),
        reason,
    };
    if &head[..4] != SEGMENT_MAGIC {
        return Err(bad("missing SQVT magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != SEGMENT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hash = u64::from_le_bytes(head[6..14].try_into().unwrap());
    if hash != schema.schema_hash() {
        return Err(StoreError::SchemaMismatch {
            expected: schema.schema_hash(),
            found: hash,
        });
    }
    let mut blocks = Vec::new();
    let mut pos = SEGMENT_HEADER_LEN;
    while pos + BLOCK_HEADER_LEN as u64 <= len {
        let mut hb = [0u8; BLOCK_HEADER_LEN];
        file.read_exact_at(&mut hb, pos)?;
        let h = BlockHeader::parse(&hb);
        if pos + h.block_len() > len {
            break;
        }
        blocks.push((h, pos));
        pos += h.block_len();
    }
    // only the newest block can be torn; check it in full
    if let Some(&(h, off)) = blocks.last() {
        let mut buf = vec![0u8; h.block_len() as usize];
        file.read_exact_at(&mut buf, off)?;
        if unpack_block(schema, &buf).is_err() {
            blocks.pop();
            pos = off;
        }
    }
    if pos < len {
        file.set_len(pos)?;
        file.sync_data()?;
    }
    Ok(Some(Scanned {
        id,
        file,
        size: pos,
        blocks,
    }))
}

/// Two-pointer merge of newest-first lists; on equal keys the tail wins.
fn merge_newest_first(
    schema: &SequenceSchema,
    tail: &[BehaviorEvent],
    disk: Vec<BehaviorEvent>,
    n: usize,
) -> Vec<BehaviorEvent> {
    let mut out = Vec::with_capacity(n.min(tail.len() + disk.len()));
    let mut t = tail.iter().peekable();
    let mut d = disk.into_iter().peekable();
    while out.len() < n {
        match (t.peek(), d.peek()) {
            (None, None) => break,
            (Some(_), None) => out.push(t.next().unwrap().clone()),
            (None, Some(_)) => out.push(d.next().unwrap()),
            (Some(a), Some(b)) => {
                let (ka, kb) = (a.key(schema), b.key(schema));
                if ka >= kb {
                    if ka == kb {
                        d.next();
                    }
                    out.push(t.next().unwrap().clone());
                } else {
                    out.push(d.next().unwrap());
                }
            }
        }
    }
    out
}

fn insert_tail(schema: &SequenceSchema, tail: &mut Vec<BehaviorEvent>, ev: BehaviorEvent) -> bool {
    let k = ev.key(schema);
    let pos = tail.partition_point(|e| e.key(schema) > k);
    if pos < tail.len() && tail[pos].key(schema) == k {
        tail[pos] = ev;
        false
    } else {
        tail.insert(pos, ev);
        true
    }
}

impl StoreHandle {
    /// Opens `dir`, creating it and recording `schema` if it is new.
    pub fn open(dir: impl AsRef<Path>, schema: SequenceSchema, config: StoreConfig) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let schema_path = dir.join(SCHEMA_FILE);
        if schema_path.exists() {
            let on_disk = SequenceSchema::from_json(&fs::read_to_string(&schema_path)?)?;
            if on_disk.schema_hash() != schema.schema_hash() {
                return Err(StoreError::SchemaMismatch {
                    expected: schema.schema_hash(),
                    found: on_disk.schema_hash(),
                });
            }
        } else {
            let tmp = dir.join("schema.json.tmp");
            fs::write(&tmp, schema.to_json())?;
            fs::rename(&tmp, &schema_path)?;
        }

        let mut ids: Vec<u32> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_segment_name(&e.file_name().to_string_lossy()))
            .collect();
        ids.sort_unstable();
        let mut scanned = Vec::new();
        for id in ids {
            if let Some(s) = scan_segment(&segment_path(&dir, id), id, &schema)? {
                scanned.push(s);
            }
        }

        let mut index = Index::default();
        let mut max_seqno = 0u64;
        for s in &scanned {
            for &(h, off) in &s.blocks {
                max_seqno = max_seqno.max(h.seqno);
                let e = index.users.entry(h.user_id).or_default();
                if e.extent.is_none_or(|x| x.seqno < h.seqno) {
                    e.extent = Some(Extent {
                        file_id: s.id,
                        offset: off,
                        length: h.block_len() as u32,
                        event_count: h.event_count,
                        seqno: h.seqno,
                    });
                }
            }
        }
        let mut live: HashMap<u32, u64> = HashMap::new();
        for e in index.users.values() {
            if let Some(x) = e.extent {
                *live.entry(x.file_id).or_default() += x.length as u64;
            }
        }
        let newest = scanned.last().map(|s| s.id);
        let mut active = None;
        for s in scanned {
            let l = live.get(&s.id).copied().unwrap_or(0);
            if l == 0 && Some(s.id) != newest {
                drop(s.file);
                fs::remove_file(segment_path(&dir, s.id))?;
                continue;
            }
            let file = Arc::new(s.file);
            if Some(s.id) == newest {
                active = Some(Active {
                    id: s.id,
                    file: file.clone(),
                    size: s.size,
                });
            }
            index.files.insert(s.id, SegmentFile { file, live: l });
        }

        let (journal, records) = Journal::open(&dir.join(JOURNAL_FILE), &schema)?;
        for r in records {
            max_seqno = max_seqno.max(r.base_seqno);
            let e = index.users.entry(r.user_id).or_default();
            let current = e.extent.map_or(0, |x| x.seqno);
            if r.base_seqno >= current && insert_tail(&schema, &mut e.tail, r.event) {
                index.tail_events += 1;
            }
        }
        index.users.retain(|_, e| e.extent.is_some() || !e.tail.is_empty());

        Ok(Self {
            shared: Arc::new(Shared {
                dir,
                schema,
                config,
                index: RwLock::new(index),
                writer: Mutex::new(Writer {
                    journal,
                    active,
                    next_seqno: max_seqno + 1,
                    fault: None,
                }),
                state: AtomicU8::new(OPEN),
                extent_reads: AtomicU64::new(0),
                bytes_read: AtomicU64::new(0),
            }),
        })
    }

    /// Opens an existing store using the schema recorded in its directory.
    pub fn open_existing(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let text = fs::read_to_string(dir.as_ref().join(SCHEMA_FILE))?;
        Self::open(dir, SequenceSchema::from_json(&text)?, config)
    }

    pub fn schema(&self) -> &SequenceSchema {
        &self.shared.schema
    }

    pub fn dir(&self) -> &Path {
        &self.shared.dir
    }

    fn check_state(&self) -> Result<(), StoreError> {
        match self.shared.state.load(Ordering::Acquire) {
            OPEN => Ok(()),
            POISONED => Err(StoreError::Poisoned),
            _ => Err(StoreError::Closed),
        }
    }

    fn index_read(&self) -> RwLockReadGuard<'_, Index> {
        self.shared.index.read().unwrap_or_else(|e| e.into_inner())
    }

    fn index_write(&self) -> RwLockWriteGuard<'_, Index> {
        self.shared.index.write().unwrap_or_else(|e| e.into_inner())
    }

    fn writer(&self) -> MutexGuard<'_, Writer> {
        self.shared.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Arms a one-shot crash or error at `point`, firing on its
    /// `skip + 1`-th occurrence.
    pub fn inject_fault(&self, point: FaultPoint, skip: u32) {
        self.writer().fault = Some((point, skip));
    }

    fn fault_fires(w: &mut Writer, point: FaultPoint) -> bool {
        Self::fault_fires_raw(&mut w.fault, point)
    }

    fn crash(&self, point: FaultPoint) -> StoreError {
        self.shared.state.store(POISONED, Ordering::Release);
        StoreError::InjectedCrash(point)
    }

    /// Makes `event` durable in the journal and visible to readers. A full
    /// tail is merged to disk first.
    pub fn append_event(&self, user_id: u64, event: BehaviorEvent) -> Result<(), StoreError> {
        self.check_state()?;
        self.shared.schema.check(&event)?;
        let mut w = self.writer();
        self.check_state()?;
        let (tail_len, base) = {
            let idx = self.index_read();
            idx.users
                .get(&user_id)
                .map_or((0, 0), |e| (e.tail.len(), e.extent.map_or(0, |x| x.seqno)))
        };
        let base = if tail_len >= self.shared.config.max_tail_events.max(1) {
            self.merge_user(&mut w, user_id, &mut MergeStats::default())?;
            self.maybe_compact(&mut w, false)?;
            self.index_read().users[&user_id].extent.map_or(0, |x| x.seqno)
        } else {
            base
        };
        let rec = JournalRecord {
            user_id,
            base_seqno: base,
            event,
        };
        let bytes = encode_record(&self.shared.schema, &rec);
        if Self::fault_fires(&mut w, FaultPoint::JournalTornWrite) {
            w.journal.append_raw(&bytes[..bytes.len() / 2], false)?;
            return Err(self.crash(FaultPoint::JournalTornWrite));
        }
        w.journal.append_raw(&bytes, self.shared.config.sync_journal)?;
        let mut idx = self.index_write();
        let e = idx.users.entry(user_id).or_default();
        if insert_tail(&self.shared.schema, &mut e.tail, rec.event) {
            idx.tail_events += 1;
        }
        Ok(())
    }

    fn read_extent(&self, file: &File, x: Extent) -> Result<Vec<BehaviorEvent>, StoreError> {
        let mut buf = vec![0u8; x.length as usize];
        file.read_exact_at(&mut buf, x.offset)?;
        let (h, events) = unpack_block(&self.shared.schema, &buf)?;
        if h.event_count != x.event_count || h.seqno != x.seqno {
            return Err(StoreError::Corrupt {
                user_id: h.user_id,
                seqno: h.seqno,
                reason: format!("index expected seqno {} with {} events", x.seqno, x.event_count),
            });
        }
        Ok(events)
    }

    /// Up to `n` most recent events, newest first. Reads at most one extent.
    pub fn get_last_n(&self, user_id: u64, n: usize) -> Result<Vec<BehaviorEvent>, StoreError> {
        self.check_state()?;
        if n == 0 {
            return Err(StoreError::InvalidArgument("n must be at least 1".into()));
        }
        let (tail, disk) = {
            let idx = self.index_read();
            let Some(e) = idx.users.get(&user_id) else {
                return Ok(Vec::new());
            };
            let disk = match e.extent {
                Some(x) => {
                    let file = &idx.files[&x.file_id].file;
                    let events = self.read_extent(file, x)?;
                    self.shared.extent_reads.fetch_add(1, Ordering::Relaxed);
                    self.shared.bytes_read.fetch_add(x.length as u64, Ordering::Relaxed);
                    events
                }
                None => Vec::new(),
            };
            let keep = e.tail.len().min(n);
            (e.tail[..keep].to_vec(), disk)
        };
        Ok(merge_newest_first(&self.shared.schema, &tail, disk, n))
    }

    /// Merges each selected user's tail into a fresh block; all users with a
    /// non-empty tail when `users` is `None`.
    pub fn run_merge(&self, users: Option<&[u64]>) -> Result<MergeStats, StoreError> {
        self.check_state()?;
        let mut w = self.writer();
        self.check_state()?;
        let mut selected: Vec<u64> = match users {
            Some(u) => u.to_vec(),
            None => self
                .index_read()
                .users
                .iter()
                .filter(|(_, e)| !e.tail.is_empty())
                .map(|(&u, _)| u)
                .collect(),
        };
        selected.sort_unstable();
        selected.dedup();
        let mut stats = MergeStats::default();
        for u in selected {
            match self.merge_user(&mut w, u, &mut stats) {
                Ok(()) => {}
                Err(StoreError::DiskFull) => stats.users_failed += 1,
                Err(e) => return Err(e),
            }
        }
        self.maybe_compact(&mut w, true)?;
        Ok(stats)
    }

    fn ensure_active(&self, w: &mut Writer, incoming: u64) -> Result<(), StoreError> {
        let rotate = match &w.active {
            None => true,
            Some(a) => a.size > SEGMENT_HEADER_LEN && a.size + incoming > self.shared.config.segment_bytes,
        };
        if !rotate {
            return Ok(());
        }
        let id = w.active.as_ref().map_or(0, |a| a.id + 1);
        let path = segment_path(&self.shared.dir, id);
        let file = OpenOptions::new().read(true).write(true).create_new(true).open(&path)?;
        let mut head = SEGMENT_MAGIC.to_vec();
        head.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
        head.extend_from_slice(&self.shared.schema.schema_hash().to_le_bytes());
        file.write_all_at(&head, 0)?;
        file.sync_all()?;
        File::open(&self.shared.dir)?.sync_all()?;
        let file = Arc::new(file);
        let previous = w.active.replace(Active {
            id,
            file: file.clone(),
            size: SEGMENT_HEADER_LEN,
        });
        let mut idx = self.index_write();
        idx.files.insert(id, SegmentFile { file, live: 0 });
        if let Some(p) = previous {
            if idx.files.get(&p.id).is_some_and(|f| f.live == 0) {
                idx.files.remove(&p.id);
                fs::remove_file(segment_path(&self.shared.dir, p.id))?;
            }
        }
        Ok(())
    }

    fn merge_user(&self, w: &mut Writer, user_id: u64, stats: &mut MergeStats) -> Result<(), StoreError> {
        let schema = &self.shared.schema;
        let (extent, tail, file) = {
            let idx = self.index_read();
            let Some(e) = idx.users.get(&user_id) else {
                return Ok(());
            };
            if e.tail.is_empty() {
                return Ok(());
            }
            let file = e.extent.map(|x| idx.files[&x.file_id].file.clone());
            (e.extent, e.tail.clone(), file)
        };
        let disk = match (extent, &file) {
            (Some(x), Some(f)) => self.read_extent(f, x)?,
            _ => Vec::new(),
        };
        let mut merged = merge_newest_first(schema, &tail, disk, usize::MAX);
        if let Some(cap) = self.shared.config.max_history_events {
            merged.truncate(cap.max(1));
        }
        let seqno = w.next_seqno;
        let block = pack_block(schema, user_id, seqno, &merged);
        self.ensure_active(w, block.len() as u64)?;

        if Self::fault_fires(w, FaultPoint::BeforeBlockWrite) {
            return Err(self.crash(FaultPoint::BeforeBlockWrite));
        }
        if Self::fault_fires(w, FaultPoint::DiskFull) {
            return Err(StoreError::DiskFull);
        }
        let active = w.active.as_mut().expect("active segment exists");
        let offset = active.size;
        if Self::fault_fires_raw(&mut w.fault, FaultPoint::TornBlockWrite) {
            active.file.write_all_at(&block[..block.len() / 2], offset)?;
            return Err(self.crash(FaultPoint::TornBlockWrite));
        }
        if let Err(e) = active.file.write_all_at(&block, offset) {
            active.file.set_len(offset)?;
            return Err(if e.raw_os_error() == Some(28) {
                StoreError::DiskFull
            } else {
                e.into()
            });
        }
        active.file.sync_data()?;
        active.size += block.len() as u64;
        let active_id = active.id;
        w.next_seqno += 1;
        if Self::fault_fires(w, FaultPoint::AfterBlockWrite) {
            return Err(self.crash(FaultPoint::AfterBlockWrite));
        }

        {
            let mut idx = self.index_write();
            let e = idx.users.get_mut(&user_id).expect("user present");
            let old = e.extent.replace(Extent {
                file_id: active_id,
                offset,
                length: block.len() as u32,
                event_count: merged.len() as u32,
                seqno,
            });
            let cleared = e.tail.len();
            e.tail.clear();
            idx.tail_events -= cleared;
            idx.files.get_mut(&active_id).expect("active registered").live += block.len() as u64;
            if let Some(o) = old {
                let f = idx.files.get_mut(&o.file_id).expect("extent file registered");
                f.live -= o.length as u64;
                if f.live == 0 && o.file_id != active_id {
                    idx.files.remove(&o.file_id);
                    fs::remove_file(segment_path(&self.shared.dir, o.file_id))?;
                    stats.files_deleted += 1;
                }
            }
        }
        stats.users_merged += 1;
        stats.events_written += merged.len() as u64;
        stats.bytes_written += block.len() as u64;
        if Self::fault_fires(w, FaultPoint::AfterRepoint) {
            return Err(self.crash(FaultPoint::AfterRepoint));
        }
        Ok(())
    }

    fn fault_fires_raw(fault: &mut Option<(FaultPoint, u32)>, point: FaultPoint) -> bool {
        match fault {
            Some((p, skip)) if *p == point => {
                if *skip == 0 {
                    *fault = None;
                    true
                } else {
                    *skip -= 1;
                    false
                }
            }
            _ => false,
        }
    }

    /// Rewrites the journal with only the current tails once stale records
    /// dominate (always when `force` and any record is stale).
    fn maybe_compact(&self, w: &mut Writer, force: bool) -> Result<(), StoreError> {
        let tail_events = self.index_read().tail_events as u64;
        let stale = w.journal.record_count().saturating_sub(tail_events);
        let due = if force {
            stale > 0
        } else {
            stale > tail_events + self.shared.config.journal_compact_records
        };
        if !due {
            return Ok(());
        }
        let records: Vec<JournalRecord> = {
            let idx = self.index_read();
            let mut users: Vec<(&u64, &Entry)> = idx.users.iter().filter(|(_, e)| !e.tail.is_empty()).collect();
            users.sort_by_key(|(u, _)| **u);
            users
                .into_iter()
                .flat_map(|(&u, e)| {
                    let base = e.extent.map_or(0, |x| x.seqno);
                    e.tail.iter().rev().map(move |ev| JournalRecord {
                        user_id: u,
                        base_seqno: base,
                        event: ev.clone(),
                    })
                })
                .collect()
        };
        let path = w.journal.path().to_path_buf();
        w.journal = Journal::create(&path, &self.shared.schema, &records)?;
        Ok(())
    }

    pub fn stats(&self) -> Result<StoreStats, StoreError> {
        self.check_state()?;
        let w = self.writer();
        let idx = self.index_read();
        let mut disk_bytes = 0;
        for (id, f) in &idx.files {
            disk_bytes += match &w.active {
                Some(a) if a.id == *id => a.size,
                _ => f.file.metadata()?.len(),
            };
        }
        Ok(StoreStats {
            disk_bytes,
            live_bytes: idx.files.values().map(|f| f.live).sum(),
            index_entries: idx.users.len() as u64,
            tail_events: idx.tail_events as u64,
            journal_bytes: w.journal.len_bytes(),
            segment_files: idx.files.len() as u64,
        })
    }

    pub fn io_counters(&self) -> IoCounters {
        IoCounters {
            extent_reads: self.shared.extent_reads.load(Ordering::Relaxed),
            bytes_read: self.shared.bytes_read.load(Ordering::Relaxed),
        }
    }

    /// Users with any data, ascending.
    pub fn user_ids(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.index_read().users.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Current disk location of a user's block.
    pub fn extent(&self, user_id: u64) -> Option<Extent> {
        self.index_read().users.get(&user_id).and_then(|e| e.extent)
    }

    /// Flushes the journal; every later call on any clone fails with
    /// [`StoreError::Closed`].
    pub fn close(&self) -> Result<(), StoreError> {
        self.check_state()?;
        let w = self.writer();
        self.shared.state.store(CLOSED, Ordering::Release);
        OpenOptions::new().write(true).open(w.journal.path())?.sync_all()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::schema::Value;
    use super::*;

    fn ev(item: u64, ts: i64) -> BehaviorEvent {
        BehaviorEvent {
            values: vec![
                Value::U64(item),
                Value::U32(1),
                Value::U32(0),
                Value::U32(2),
                Value::I64(ts),
                Value::F32(0.25),
                Value::Null,
            ],
        }
    }

    fn open(dir: &Path) -> StoreHandle {
        StoreHandle::open(dir, SequenceSchema::behavior_default(), StoreConfig::default()).unwrap()
    }

    #[test]
    fn empty_store_is_all_zero() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        let st = s.stats().unwrap();
        assert_eq!((st.disk_bytes, st.live_bytes, st.index_entries, st.tail_events), (0, 0, 0, 0));
        assert_eq!(st.journal_bytes, 14);
        assert!(s.get_last_n(1, 5).unwrap().is_empty());
        assert!(s.get_last_n(1, 0).is_err());
    }

    #[test]
    fn tail_dedups_and_orders() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        s.append_event(1, ev(5, 100)).unwrap();
        s.append_event(1, ev(9, 100)).unwrap();
        s.append_event(1, ev(2, 200)).unwrap();
        let mut dup = ev(5, 100);
        dup.values[1] = Value::U32(7);
        s.append_event(1, dup.clone()).unwrap();
        let got = s.get_last_n(1, 10).unwrap();
        assert_eq!(got, vec![ev(2, 200), ev(9, 100), dup]);
        assert_eq!(s.stats().unwrap().tail_events, 3);
    }

    #[test]
    fn rotation_deletes_dead_files() {
        let d = tempfile::tempdir().unwrap();
        let cfg = StoreConfig {
            segment_bytes: 256,
            ..StoreConfig::default()
        };
        let s = StoreHandle::open(d.path(), SequenceSchema::behavior_default(), cfg.clone()).unwrap();
        for round in 0..6i64 {
            for i in 0..8 {
                s.append_event(1, ev(i, 1000 + round * 10 + i as i64)).unwrap();
            }
            s.run_merge(None).unwrap();
        }
        let st = s.stats().unwrap();
        assert!(st.segment_files <= 2, "{st:?}");
        assert_eq!(s.get_last_n(1, 100).unwrap().len(), 48);
        drop(s);
        let s = StoreHandle::open(d.path(), SequenceSchema::behavior_default(), cfg).unwrap();
        assert_eq!(s.get_last_n(1, 100).unwrap().len(), 48);
    }
}
