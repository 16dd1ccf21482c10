//! Column-packed event blocks and the delimited-text baseline.
//!
//! Block layout (little-endian):
//! `user_id u64 | seqno u64 | event_count u32 | payload_len u32 | payload | crc32(payload) u32`.
//! The payload holds one column per schema field, in schema order. Nullable
//! columns start with a presence bitmap (bit `i` of byte `i / 8`) and then
//! store only present values.

use super::schema::{BehaviorEvent, FieldKind, SequenceSchema, Value};
use super::StoreError;

pub const BLOCK_HEADER_LEN: usize = 24;
pub const BLOCK_TRAILER_LEN: usize = 4;

pub fn put_varint(out: &mut Vec<u8>, mut x: u64) {
    while x >= 0x80 {
        out.push((x as u8) | 0x80);
        x >>= 7;
    }
    out.push(x as u8);
}

#[inline]
pub fn zigzag(x: i64) -> u64 {
    ((x << 1) ^ (x >> 63)) as u64
}

#[inline]
pub fn unzigzag(x: u64) -> i64 {
    ((x >> 1) as i64) ^ -((x & 1) as i64)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (wanted {n})", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, String> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub(crate) fn varint(&mut self) -> Result<u64, String> {
        let mut x = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            if shift == 63 && b > 1 {
                return Err("varint overflows u64".into());
            }
            x |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(x);
            }
        }
        Err("varint longer than 10 bytes".into())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

fn enum_width(max: u32) -> u8 {
    match max {
        0..=0xff => 1,
        0x100..=0xffff => 2,
        _ => 4,
    }
}

/// Column-packs `events`, which should already be newest-first.
pub fn pack_payload(schema: &SequenceSchema, events: &[BehaviorEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    for (fi, f) in schema.fields().iter().enumerate() {
        let col: Vec<&Value> = events.iter().map(|e| &e.values[fi]).collect();
        if f.nullable {
            let mut bitmap = vec![0u8; col.len().div_ceil(8)];
            for (i, v) in col.iter().enumerate() {
                if !matches!(v, Value::Null) {
                    bitmap[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bitmap);
        }
        let present: Vec<&Value> = col.into_iter().filter(|v| !matches!(v, Value::Null)).collect();
        match f.kind {
            FieldKind::U64Id => {
                for v in present {
                    if let Value::U64(x) = v {
                        put_varint(&mut out, *x);
                    }
                }
            }
            FieldKind::I64Timestamp => {
                let mut prev: Option<i64> = None;
                for v in present {
                    if let Value::I64(t) = v {
                        let enc = match prev {
                            None => zigzag(*t),
                            Some(p) => zigzag(p.wrapping_sub(*t)),
                        };
                        put_varint(&mut out, enc);
                        prev = Some(*t);
                    }
                }
            }
            FieldKind::U32Enum => {
                let vals: Vec<u32> = present
                    .iter()
                    .map(|v| if let Value::U32(x) = v { *x } else { 0 })
                    .collect();
                let width = enum_width(vals.iter().copied().max().unwrap_or(0));
                out.push(width);
                for x in vals {
                    out.extend_from_slice(&x.to_le_bytes()[..width as usize]);
                }
            }
            FieldKind::U16 => {
                for v in present {
                    if let Value::U16(x) = v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            FieldKind::F32 => {
                for v in present {
                    if let Value::F32(x) = v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            FieldKind::F32Vec => {
                for v in present {
                    if let Value::F32Vec(xs) = v {
                        for x in xs {
                            out.extend_from_slice(&x.to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pack_payload`] for exactly `count` events.
pub fn unpack_payload(schema: &SequenceSchema, payload: &[u8], count: usize) -> Result<Vec<BehaviorEvent>, String> {
    // every event occupies at least one bit
    if count > payload.len().saturating_mul(8) {
        return Err(format!("{count} events cannot fit in {} bytes", payload.len()));
    }
    let mut r = Reader::new(payload);
    let mut events: Vec<BehaviorEvent> = (0..count)
        .map(|_| BehaviorEvent {
            values: Vec::with_capacity(schema.fields().len()),
        })
        .collect();
    for f in schema.fields() {
        let present: Vec<bool> = if f.nullable {
            let bitmap = r.take(count.div_ceil(8))?;
            (0..count).map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0).collect()
        } else {
            vec![true; count]
        };
        let n_present = present.iter().filter(|&&p| p).count();
        let mut vals: Vec<Value> = Vec::with_capacity(n_present);
        match f.kind {
            FieldKind::U64Id => {
                for _ in 0..n_present {
                    vals.push(Value::U64(r.varint()?));
                }
            }
            FieldKind::I64Timestamp => {
                let mut prev: Option<i64> = None;
                for _ in 0..n_present {
                    let enc = unzigzag(r.varint()?);
                    let t = match prev {
                        None => enc,
                        Some(p) => p.wrapping_sub(enc),
                    };
                    vals.push(Value::I64(t));
                    prev = Some(t);
                }
            }
            FieldKind::U32Enum => {
                let width = r.u8()? as usize;
                if ![1, 2, 4].contains(&width) {
                    return Err(format!("bad enum width {width} in {}", f.name));
                }
                for _ in 0..n_present {
                    let mut b = [0u8; 4];
                    b[..width].copy_from_slice(r.take(width)?);
                    vals.push(Value::U32(u32::from_le_bytes(b)));
                }
            }
            FieldKind::U16 => {
                for _ in 0..n_present {
                    vals.push(Value::U16(r.u16()?));
                }
            }
            FieldKind::F32 => {
                for _ in 0..n_present {
                    vals.push(Value::F32(r.f32()?));
                }
            }
            FieldKind::F32Vec => {
                let dim = f.dim.unwrap_or(0);
                for _ in 0..n_present {
                    let xs = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                    vals.push(Value::F32Vec(xs));
                }
            }
        }
        let mut it = vals.into_iter();
        for (ev, p) in events.iter_mut().zip(present) {
            ev.values.push(if p { it.next().unwrap() } else { Value::Null });
        }
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub user_id: u64,
    pub seqno: u64,
    pub event_count: u32,
    pub payload_len: u32,
}

impl BlockHeader {
    pub fn parse(bytes: &[u8; BLOCK_HEADER_LEN]) -> Self {
        let u = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let w = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Self {
            user_id: u(0),
            seqno: u(8),
            event_count: w(16),
            payload_len: w(20),
        }
    }

    /// Header, payload and checksum.
    pub fn block_len(&self) -> u64 {
        (BLOCK_HEADER_LEN + BLOCK_TRAILER_LEN) as u64 + self.payload_len as u64
    }
}

/// Full on-disk block for `events` (newest-first).
pub fn pack_block(schema: &SequenceSchema, user_id: u64, seqno: u64, events: &[BehaviorEvent]) -> Vec<u8> {
    let payload = pack_payload(schema, events);
    let mut out = Vec::with_capacity(BLOCK_HEADER_LEN + payload.len() + BLOCK_TRAILER_LEN);
    out.extend_from_slice(&user_id.to_le_bytes());
    out.extend_from_slice(&seqno.to_le_bytes());
    out.extend_from_slice(&(events.len() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

/// Verifies the checksum and decodes a block produced by [`pack_block`].
pub fn unpack_block(schema: &SequenceSchema, bytes: &[u8]) -> Result<(BlockHeader, Vec<BehaviorEvent>), StoreError> {
    let corrupt = |h: Option<BlockHeader>, reason: String| StoreError::Corrupt {
        user_id: h.map_or(0, |h| h.user_id),
        seqno: h.map_or(0, |h| h.seqno),
        reason,
    };
    let head: &[u8; BLOCK_HEADER_LEN] = bytes
        .get(..BLOCK_HEADER_LEN)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| corrupt(None, format!("block of {} bytes has no header", bytes.len())))?;
    let h = BlockHeader::parse(head);
    if bytes.len() as u64 != h.block_len() {
        return Err(corrupt(Some(h), format!("block is {} bytes, header says {}", bytes.len(), h.block_len())));
    }
    let payload = &bytes[BLOCK_HEADER_LEN..bytes.len() - BLOCK_TRAILER_LEN];
    let stored = u32::from_le_bytes(bytes[bytes.len() - BLOCK_TRAILER_LEN..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(corrupt(Some(h), format!("checksum {actual:08x} != stored {stored:08x}")));
    }
    let events = unpack_payload(schema, payload, h.event_count as usize).map_err(|e| corrupt(Some(h), e))?;
    Ok((h, events))
}

/// Every value as text: tab between fields, newline after each event, empty
/// for null, comma-separated vectors.
pub fn string_baseline_encode(schema: &SequenceSchema, events: &[BehaviorEvent]) -> Vec<u8> {
    let mut out = String::new();
    for ev in events {
        for (i, v) in ev.values.iter().enumerate().take(schema.fields().len()) {
            if i > 0 {
                out.push('\t');
            }
            match v {
                Value::Null => {}
                Value::U64(x) => out.push_str(&x.to_string()),
                Value::U32(x) => out.push_str(&x.to_string()),
                Value::U16(x) => out.push_str(&x.to_string()),
                Value::I64(x) => out.push_str(&x.to_string()),
                Value::F32(x) => out.push_str(&x.to_string()),
                Value::F32Vec(xs) => {
                    let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                    out.push_str(&parts.join(","));
                }
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}
