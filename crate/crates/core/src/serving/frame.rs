//! Wire framing.
//!
//! ```text
//! length:u32 op:u8 flags:u8 request_id:u64 payload
//! ```
//!
//! All integers little-endian. `length` counts everything after itself, so
//! `length = 10 + payload.len()`. Flag bit 0 marks a compressed payload;
//! other bits must be clear.

use thiserror::Error;

pub const LEN_PREFIX: usize = 4;
/// Bytes after the length prefix that precede the payload.
pub const FIXED_BODY: usize = 10;
pub const HEADER_LEN: usize = LEN_PREFIX + FIXED_BODY;
pub const DEFAULT_MAX_FRAME: usize = 16 << 20;
pub const FLAG_COMPRESSED: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Op {
    PutEvent = 0,
    GetLastN = 1,
    Merge = 2,
    Stats = 3,
    Score = 4,
    Error = 255,
}

impl Op {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Op::PutEvent,
            1 => Op::GetLastN,
            2 => Op::Merge,
            3 => Op::Stats,
            4 => Op::Score,
            255 => Op::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub op: Op,
    pub flags: u8,
    pub request_id: u64,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn new(op: Op, request_id: u64, payload: Vec<u8>) -> Self {
        Self {
            op,
            flags: 0,
            request_id,
            payload,
        }
    }

    pub fn is_compressed(&self) -> bool {
        self.flags & FLAG_COMPRESSED != 0
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("incomplete frame: need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("frame length {length} exceeds limit {max}")]
    TooLarge { length: usize, max: usize },
    #[error("frame length {0} is shorter than the fixed header")]
    TooShort(usize),
    #[error("frame declares {declared} bytes, buffer holds {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown op {0}")]
    BadOp(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
}

impl FrameError {
    /// Whether the byte stream can no longer be split into frames.
    pub fn is_desync(&self) -> bool {
        matches!(self, FrameError::TooLarge { .. } | FrameError::TooShort(_))
    }
}

pub fn encode_frame(frame: &WireFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.wire_len());
    out.extend_from_slice(&((FIXED_BODY + frame.payload.len()) as u32).to_le_bytes());
    out.push(frame.op as u8);
    out.push(frame.flags);
    out.extend_from_slice(&frame.request_id.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    out
}

/// Reads and checks the length prefix. Returns the body length.
pub fn body_len(prefix: [u8; LEN_PREFIX], max_frame: usize) -> Result<usize, FrameError> {
    let length = u32::from_le_bytes(prefix) as usize;
    if length < FIXED_BODY {
        return Err(FrameError::TooShort(length));
    }
    if length > max_frame {
        return Err(FrameError::TooLarge { length, max: max_frame });
    }
    Ok(length)
}

/// Parses the bytes that follow the length prefix.
pub fn decode_body(body: &[u8]) -> Result<WireFrame, FrameError> {
    if body.len() < FIXED_BODY {
        return Err(FrameError::TooShort(body.len()));
    }
    let op = Op::from_u8(body[0]).ok_or(FrameError::BadOp(body[0]))?;
    let flags = body[1];
    if flags & !FLAG_COMPRESSED != 0 {
        return Err(FrameError::BadFlags(flags));
    }
    let request_id = u64::from_le_bytes(body[2..10].try_into().expect("8 bytes"));
    Ok(WireFrame {
        op,
        flags,
        request_id,
        payload: body[FIXED_BODY..].to_vec(),
    })
}

/// Decodes the first frame of `buf`, returning it and the bytes consumed.
pub fn decode_frame(buf: &[u8], max_frame: usize) -> Result<(WireFrame, usize), FrameError> {
    if buf.len() < LEN_PREFIX {
        return Err(FrameError::Incomplete {
            needed: LEN_PREFIX - buf.len(),
        });
    }
    let length = body_len(buf[..LEN_PREFIX].try_into().expect("4 bytes"), max_frame)?;
    let total = LEN_PREFIX + length;
    if buf.len() < total {
        return Err(FrameError::Incomplete {
            needed: total - buf.len(),
        });
    }
    Ok((decode_body(&buf[LEN_PREFIX..total])?, total))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_exact(buf: &[u8], max_frame: usize) -> Result<WireFrame, FrameError> {
    if buf.len() >= LEN_PREFIX {
        let declared = LEN_PREFIX + u32::from_le_bytes(buf[..LEN_PREFIX].try_into().expect("4 bytes")) as usize;
        if declared != buf.len() {
            return Err(FrameError::LengthMismatch {
                declared,
                actual: buf.len(),
            });
        }
    }
    decode_frame(buf, max_frame).map(|(f, _)| f)
}
