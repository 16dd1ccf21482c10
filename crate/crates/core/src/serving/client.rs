//! Blocking client. Requests may be pipelined with [`Client::send`] and
//! [`Client::recv`]; the typed helpers send one request and wait.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::compress::{compress_payload, decompress_payload};
use super::frame::{body_len, decode_body, encode_frame, Op, WireFrame, DEFAULT_MAX_FRAME, FLAG_COMPRESSED, LEN_PREFIX};
use super::messages::{
    decode_error, decode_events, GetRequest, PutRequest, ScoreRequest, ScoreResponse, StatsReport,
};
use super::ServingError;
use crate::store::{BehaviorEvent, MergeStats, SequenceSchema};

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
    max_frame: usize,
    compress: bool,
    schema: Option<SequenceSchema>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ServingError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_id: 1,
            max_frame: DEFAULT_MAX_FRAME,
            compress: true,
            schema: None,
        })
    }

    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) -> Result<(), ServingError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }

    pub fn set_compression(&mut self, on: bool) {
        self.compress = on;
    }

    /// Queues a request and returns its id. Call [`Client::flush`] (or
    /// [`Client::recv`]) to put it on the wire.
    pub fn send(&mut self, op: Op, payload: &[u8]) -> Result<u64, ServingError> {
        let id = self.next_id;
        self.next_id += 1;
        let (payload, compressed) = if self.compress {
            compress_payload(payload)
        } else {
            (payload.to_vec(), false)
        };
        let frame = WireFrame {
            op,
            flags: if compressed { FLAG_COMPRESSED } else { 0 },
            request_id: id,
            payload,
        };
        self.send_raw(&encode_frame(&frame))?;
        Ok(id)
    }

    /// Writes arbitrary bytes, bypassing framing.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ServingError> {
        self.writer.write_all(bytes)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ServingError> {
        self.writer.flush()?;
        Ok(())
    }

    /// Next response frame with its payload decompressed.
    pub fn recv(&mut self) -> Result<WireFrame, ServingError> {
        self.writer.flush()?;
        let mut prefix = [0u8; LEN_PREFIX];
        self.reader.read_exact(&mut prefix)?;
        let len = body_len(prefix, self.max_frame)?;
        let mut body = vec![0u8; len];
        self.reader.read_exact(&mut body)?;
        let mut frame = decode_body(&body)?;
        if frame.is_compressed() {
            frame.payload = decompress_payload(&frame.payload, self.max_frame)?;
            frame.flags &= !FLAG_COMPRESSED;
        }
        Ok(frame)
    }

    /// One request, one response. Error frames become [`ServingError::Remote`].
    pub fn call(&mut self, op: Op, payload: &[u8]) -> Result<Vec<u8>, ServingError> {
        let id = self.send(op, payload)?;
        let resp = self.recv()?;
        if resp.request_id != id {
            return Err(ServingError::Protocol(format!(
                "response id {} for request {id}",
                resp.request_id
            )));
        }
        match resp.op {
            Op::Error => {
                let (code, message) = decode_error(&resp.payload);
                Err(ServingError::Remote { code, message })
            }
            o if o == op => Ok(resp.payload),
            o => Err(ServingError::Protocol(format!("response op {o:?} for {op:?}"))),
        }
    }

    pub fn stats(&mut self) -> Result<StatsReport, ServingError> {
        let bytes = self.call(Op::Stats, &[])?;
        let report: StatsReport = serde_json::from_slice(&bytes).map_err(|e| ServingError::Protocol(e.to_string()))?;
        if self.schema.is_none() {
            self.schema = Some(SequenceSchema::from_json(&report.schema.to_string())?);
        }
        Ok(report)
    }

    /// The server's schema, fetched once through `Stats`.
    pub fn schema(&mut self) -> Result<SequenceSchema, ServingError> {
        if self.schema.is_none() {
            self.stats()?;
        }
        Ok(self.schema.clone().expect("set by stats"))
    }

    pub fn put(&mut self, user: u64, events: Vec<BehaviorEvent>) -> Result<(), ServingError> {
        let schema = self.schema()?;
        let payload = PutRequest { user, events }.encode(&schema);
        self.call(Op::PutEvent, &payload).map(|_| ())
    }

    pub fn get_last_n(&mut self, user: u64, n: u32) -> Result<Vec<BehaviorEvent>, ServingError> {
        let schema = self.schema()?;
        let bytes = self.call(Op::GetLastN, &GetRequest { user, n }.encode())?;
        decode_events(&schema, &bytes)
    }

    pub fn merge(&mut self) -> Result<MergeStats, ServingError> {
        let bytes = self.call(Op::Merge, &[])?;
        serde_json::from_slice(&bytes).map_err(|e| ServingError::Protocol(e.to_string()))
    }

    pub fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ServingError> {
        ScoreResponse::decode(&self.call(Op::Score, &req.encode())?)
    }
}
