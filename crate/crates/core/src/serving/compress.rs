//! Payload compression: zstd with a `u32` original-length prefix, applied
//! only above a size threshold and only when it shrinks the payload.

use thiserror::Error;

pub const COMPRESS_THRESHOLD: usize = 512;
pub const ZSTD_LEVEL: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompressError {
    #[error("compressed payload shorter than its length prefix")]
    MissingPrefix,
    #[error("declared length {declared} exceeds limit {max}")]
    TooLarge { declared: usize, max: usize },
    #[error("zstd: {0}")]
    Codec(String),
    #[error("decompressed {actual} bytes, prefix declares {declared}")]
    LengthMismatch { declared: usize, actual: usize },
}

/// Returns the bytes to send and whether they are compressed.
pub fn compress_payload(payload: &[u8]) -> (Vec<u8>, bool) {
    if payload.len() <= COMPRESS_THRESHOLD {
        return (payload.to_vec(), false);
    }
    match zstd::bulk::compress(payload, ZSTD_LEVEL) {
        Ok(body) if body.len() + 4 < payload.len() => {
            let mut out = Vec::with_capacity(body.len() + 4);
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&body);
            (out, true)
        }
        _ => (payload.to_vec(), false),
    }
}

/// Inverse of a compressed [`compress_payload`] result. Never allocates
/// more than `max_len` bytes.
pub fn decompress_payload(bytes: &[u8], max_len: usize) -> Result<Vec<u8>, CompressError> {
    if bytes.len() < 4 {
        return Err(CompressError::MissingPrefix);
    }
    let declared = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if declared > max_len {
        return Err(CompressError::TooLarge { declared, max: max_len });
    }
    let out = zstd::bulk::decompress(&bytes[4..], declared).map_err(|e| CompressError::Codec(e.to_string()))?;
    if out.len() != declared {
        return Err(CompressError::LengthMismatch {
            declared,
            actual: out.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_payloads_stay_raw() {
        let p = vec![0u8; COMPRESS_THRESHOLD];
        assert_eq!(compress_payload(&p), (p.clone(), false));
    }

    #[test]
    fn repetitive_payload_compresses_and_round_trips() {
        let p: Vec<u8> = (0..4096).map(|i| (i % 7) as u8).collect();
        let (c, flag) = compress_payload(&p);
        assert!(flag && c.len() < p.len() / 4);
        assert_eq!(decompress_payload(&c, 1 << 20).unwrap(), p);
    }

    #[test]
    fn random_payload_is_sent_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<u8> = (0..2048).map(|_| rng.gen()).collect();
        assert_eq!(compress_payload(&p), (p, false));
    }

    #[test]
    fn corrupt_input_is_an_error() {
        let p: Vec<u8> = (0..4096).map(|i| (i % 5) as u8).collect();
        let (mut c, _) = compress_payload(&p);
        assert!(decompress_payload(&c, 100).is_err());
        let n = c.len();
        c[n / 2] ^= 0xff;
        c.truncate(n - 3);
        assert!(decompress_payload(&c, 1 << 20).is_err());
        assert_eq!(decompress_payload(&[1, 2], 10), Err(CompressError::MissingPrefix));
    }
}
