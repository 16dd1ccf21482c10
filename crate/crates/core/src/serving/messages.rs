//! Op-specific payloads.
//!
//! ```text
//! PutEvent   request  user:u64 count:u32 packed_events     response  empty
//! GetLastN   request  user:u64 n:u32                       response  count:u32 packed_events
//! Merge      request  empty                                response  JSON MergeStats
//! Stats      request  empty                                response  JSON StatsReport
//! Score      request  user:u64 n:u32 item:u64 category:u32 request_time:i64
//!            response probability:f64 checksum:u64
//! Error      code:u16 utf8 message
//! ```
//!
//! `packed_events` is the store's columnar event packing, newest first.

use serde::{Deserialize, Serialize};

use super::ServingError;
use crate::harness::TargetItem;
use crate::store::{pack_payload, unpack_payload, BehaviorEvent, SequenceSchema, StoreStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    UnknownOp = 2,
    TooLarge = 3,
    Decompress = 4,
    Store = 5,
    ModelUnavailable = 6,
    Model = 7,
    InvalidRequest = 8,
}

impl ErrorCode {
    pub fn from_u16(c: u16) -> Option<Self> {
        use ErrorCode::*;
        [Malformed, UnknownOp, TooLarge, Decompress, Store, ModelUnavailable, Model, InvalidRequest]
            .into_iter()
            .find(|k| *k as u16 == c)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ServingError> {
        if self.buf.len() < N {
            return Err(ServingError::Protocol(format!("{} payload truncated", self.what)));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("N bytes"))
    }

    fn u32(&mut self) -> Result<u32, ServingError> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, ServingError> {
        self.take().map(u64::from_le_bytes)
    }

    fn finish(self) -> Result<(), ServingError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(ServingError::Protocol(format!("{} trailing bytes in {} payload", self.buf.len(), self.what)))
        }
    }
}

pub fn encode_events(schema: &SequenceSchema, events: &[BehaviorEvent]) -> Vec<u8> {
    let mut out = (events.len() as u32).to_le_bytes().to_vec();
    out.extend_from_slice(&pack_payload(schema, events));
    out
}

pub fn decode_events(schema: &SequenceSchema, bytes: &[u8]) -> Result<Vec<BehaviorEvent>, ServingError> {
    let mut c = Cursor { buf: bytes, what: "event list" };
    let count = c.u32()? as usize;
    unpack_payload(schema, c.buf, count).map_err(ServingError::Protocol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PutRequest {
    pub user: u64,
    pub events: Vec<BehaviorEvent>,
}

impl PutRequest {
    pub fn encode(&self, schema: &SequenceSchema) -> Vec<u8> {
        let mut out = self.user.to_le_bytes().to_vec();
        out.extend_from_slice(&encode_events(schema, &self.events));
        out
    }

    pub fn decode(schema: &SequenceSchema, bytes: &[u8]) -> Result<Self, ServingError> {
        let mut c = Cursor { buf: bytes, what: "put" };
        let user = c.u64()?;
        Ok(Self {
            user,
            events: decode_events(schema, c.buf)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GetRequest {
    pub user: u64,
    pub n: u32,
}

impl GetRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.user.to_le_bytes().to_vec();
        out.extend_from_slice(&self.n.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ServingError> {
        let mut c = Cursor { buf: bytes, what: "get" };
        let r = Self {
            user: c.u64()?,
            n: c.u32()?,
        };
        c.finish()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreRequest {
    pub user: u64,
    /// History length to fetch; capped at the model's `seq_len`.
    pub n: u32,
    pub target: TargetItem,
    pub request_time: i64,
}

impl ScoreRequest {
    pub const LEN: usize = 32;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.user.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.target.item.to_le_bytes());
        out.extend_from_slice(&self.target.category.to_le_bytes());
        out.extend_from_slice(&self.request_time.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ServingError> {
        let mut c = Cursor { buf: bytes, what: "score" };
        let r = Self {
            user: c.u64()?,
            n: c.u32()?,
            target: TargetItem {
                item: c.u64()?,
                category: c.u32()?,
            },
            request_time: c.u64()? as i64,
        };
        c.finish()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResponse {
    pub probability: f64,
    /// Hash of the fused encoding and the probability bits.
    pub checksum: u64,
}

impl ScoreResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.probability.to_le_bytes().to_vec();
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ServingError> {
        let mut c = Cursor { buf: bytes, what: "score response" };
        let r = Self {
            probability: f64::from_bits(c.u64()?),
            checksum: c.u64()?,
        };
        c.finish()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub store: StoreStats,
    pub schema: serde_json::Value,
    /// Encoder name of the loaded checkpoint.
    pub model: Option<String>,
}

pub fn encode_error(code: ErrorCode, message: &str) -> Vec<u8> {
    let mut out = (code as u16).to_le_bytes().to_vec();
    out.extend_from_slice(message.as_bytes());
    out
}

pub fn decode_error(bytes: &[u8]) -> (u16, String) {
    if bytes.len() < 2 {
        return (0, String::from_utf8_lossy(bytes).into_owned());
    }
    (
        u16::from_le_bytes([bytes[0], bytes[1]]),
        String::from_utf8_lossy(&bytes[2..]).into_owned(),
    )
}
