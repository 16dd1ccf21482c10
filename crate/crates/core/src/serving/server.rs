//! Thread-per-connection TCP server.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::compress::{compress_payload, decompress_payload, CompressError};
use super::frame::{body_len, decode_body, encode_frame, FrameError, Op, WireFrame, DEFAULT_MAX_FRAME, FIXED_BODY, FLAG_COMPRESSED, LEN_PREFIX};
use super::messages::{
    encode_error, encode_events, ErrorCode, GetRequest, PutRequest, ScoreRequest, ScoreResponse, StatsReport,
};
use super::ServingError;
use crate::harness::{metrics::PRED_CLAMP, CtrModel, HistoryEvent};
use crate::store::{StoreError, StoreHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub max_frame: usize,
    /// Compress response payloads above the threshold when it helps.
    pub compress: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_frame: DEFAULT_MAX_FRAME,
            compress: true,
        }
    }
}

/// Store, optional model and limits shared by every connection.
pub struct Service {
    pub store: StoreHandle,
    pub model: Option<CtrModel>,
    pub config: ServerConfig,
}

type Reply = Result<Vec<u8>, (ErrorCode, String)>;

fn store_error(e: StoreError) -> (ErrorCode, String) {
    let code = match e {
        StoreError::InvalidEvent(_) | StoreError::InvalidArgument(_) => ErrorCode::InvalidRequest,
        _ => ErrorCode::Store,
    };
    (code, e.to_string())
}

fn bad_request(e: ServingError) -> (ErrorCode, String) {
    (ErrorCode::InvalidRequest, e.to_string())
}

impl Service {
    pub fn new(store: StoreHandle, model: Option<CtrModel>, config: ServerConfig) -> Self {
        Self { store, model, config }
    }

    /// Answers one decoded request frame. Never panics on request content.
    pub fn handle(&self, req: &WireFrame) -> WireFrame {
        let reply = self.dispatch(req);
        let (op, payload) = match reply {
            Ok(p) => (req.op, p),
            Err((code, msg)) => (Op::Error, encode_error(code, &msg)),
        };
        let (payload, compressed) = if self.config.compress {
            compress_payload(&payload)
        } else {
            (payload, false)
        };
        WireFrame {
            op,
            flags: if compressed { FLAG_COMPRESSED } else { 0 },
            request_id: req.request_id,
            payload,
        }
    }

    fn dispatch(&self, req: &WireFrame) -> Reply {
        let owned;
        let payload = if req.is_compressed() {
            owned = decompress_payload(&req.payload, self.config.max_frame)
                .map_err(|e: CompressError| (ErrorCode::Decompress, e.to_string()))?;
            &owned[..]
        } else {
            &req.payload[..]
        };
        let schema = self.store.schema();
        match req.op {
            Op::PutEvent => {
                let put = PutRequest::decode(schema, payload).map_err(bad_request)?;
                for ev in put.events {
                    self.store.append_event(put.user, ev).map_err(store_error)?;
                }
                Ok(Vec::new())
            }
            Op::GetLastN => {
                let get = GetRequest::decode(payload).map_err(bad_request)?;
                let events = self.store.get_last_n(get.user, get.n as usize).map_err(store_error)?;
                Ok(encode_events(schema, &events))
            }
            Op::Merge => {
                expect_empty(payload)?;
                let stats = self.store.run_merge(None).map_err(store_error)?;
                Ok(serde_json::to_vec(&stats).expect("plain struct"))
            }
            Op::Stats => {
                expect_empty(payload)?;
                let report = StatsReport {
                    store: self.store.stats().map_err(store_error)?,
                    schema: serde_json::from_str(&schema.to_json()).expect("schema JSON"),
                    model: self.model.as_ref().map(|m| m.config.encoder.name().to_string()),
                };
                Ok(serde_json::to_vec(&report).expect("plain struct"))
            }
            Op::Score => {
                let score = ScoreRequest::decode(payload).map_err(bad_request)?;
                self.score(&score).map(|r| r.encode())
            }
            Op::Error => Err((ErrorCode::InvalidRequest, "error frames are responses only".into())),
        }
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, (ErrorCode, String)> {
        let model = self
            .model
            .as_ref()
            .ok_or((ErrorCode::ModelUnavailable, "no checkpoint loaded".to_string()))?;
        let n = (req.n as usize).min(model.config.laser.seq_len);
        let events = if n == 0 {
            Vec::new()
        } else {
            self.store.get_last_n(req.user, n).map_err(store_error)?
        };
        let schema = self.store.schema();
        let history: Vec<HistoryEvent> = events.iter().map(|e| HistoryEvent::from_behavior(schema, e)).collect();
        let input = model.input(&history, req.target, req.request_time);
        let pred = model.predict(&input).map_err(|e| (ErrorCode::Model, e.to_string()))?;
        Ok(ScoreResponse {
            probability: pred.prob.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP),
            checksum: pred.checksum(),
        })
    }
}

fn expect_empty(payload: &[u8]) -> Result<(), (ErrorCode, String)> {
    if payload.is_empty() {
        Ok(())
    } else {
        Err((ErrorCode::InvalidRequest, format!("unexpected {}-byte payload", payload.len())))
    }
}

fn frame_error_code(e: &FrameError) -> ErrorCode {
    match e {
        FrameError::TooLarge { .. } => ErrorCode::TooLarge,
        FrameError::BadOp(_) => ErrorCode::UnknownOp,
        _ => ErrorCode::Malformed,
    }
}

fn error_frame(request_id: u64, e: &FrameError) -> WireFrame {
    WireFrame::new(Op::Error, request_id, encode_error(frame_error_code(e), &e.to_string()))
}

/// Serves one connection until EOF or a framing desync.
pub fn serve_connection(service: &Service, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let max = service.config.max_frame;
    loop {
        let mut prefix = [0u8; LEN_PREFIX];
        match reader.read_exact(&mut prefix) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let length = match body_len(prefix, max) {
            Ok(l) => l,
            Err(e) => {
                writer.write_all(&encode_frame(&error_frame(0, &e)))?;
                writer.flush()?;
                break;
            }
        };
        let mut body = vec![0u8; length];
        match reader.read_exact(&mut body) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let resp = match decode_body(&body) {
            Ok(req) => service.handle(&req),
            Err(e) => {
                debug_assert!(length >= FIXED_BODY);
                let id = u64::from_le_bytes(body[2..10].try_into().expect("8 bytes"));
                error_frame(id, &e)
            }
        };
        writer.write_all(&encode_frame(&resp))?;
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
    writer.flush()?;
    let _ = writer.get_ref().shutdown(Shutdown::Write);
    Ok(())
}

pub struct Server {
    listener: TcpListener,
    service: Arc<Service>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Service) -> Result<Self, ServingError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            service: Arc::new(service),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServingError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections on the calling thread until `stop` is set.
    pub fn run(self, stop: Arc<AtomicBool>) -> Result<(), ServingError> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let _ = stream.set_nodelay(true);
            let service = Arc::clone(&self.service);
            std::thread::spawn(move || {
                let _ = serve_connection(&service, stream);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<RunningServer, ServingError> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            let _ = self.run(flag);
        });
        Ok(RunningServer {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

pub struct RunningServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}
