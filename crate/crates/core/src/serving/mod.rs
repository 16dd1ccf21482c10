//! Length-prefixed binary protocol over TCP in front of the store and a
//! loaded CTR model.

pub mod client;
pub mod compress;
pub mod frame;
pub mod messages;
pub mod server;

use thiserror::Error;

pub use client::Client;
pub use compress::{compress_payload, decompress_payload, CompressError, COMPRESS_THRESHOLD};
pub use frame::{decode_exact, decode_frame, encode_frame, FrameError, Op, WireFrame, DEFAULT_MAX_FRAME, HEADER_LEN};
pub use messages::{ErrorCode, GetRequest, PutRequest, ScoreRequest, ScoreResponse, StatsReport};
pub use server::{serve_connection, RunningServer, Server, ServerConfig, Service};

#[derive(Debug, Error)]
pub enum ServingError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("server error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}
