//! Live-server fixtures and the protocol fuzzer.

use std::path::Path;
use std::time::Duration;

use laser_core::attention::{Checkpoint, LaserConfig};
use laser_core::harness::{CtrConfig, CtrModel, EncoderKind, HistoryEvent, TargetItem};
use laser_core::serving::{
    decode_frame, encode_frame, Client, FrameError, Op, RunningServer, ScoreRequest, ScoreResponse, Server, ServerConfig, Service,
    ServingError, WireFrame, DEFAULT_MAX_FRAME,
};
use laser_core::store::{BehaviorEvent, SequenceSchema, StoreConfig, StoreHandle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_model(seed: u64) -> CtrModel {
    let cfg = CtrConfig {
        encoder: EncoderKind::Laser,
        laser: LaserConfig::new(40, 16, 8, 5, 2),
        n_items: 500,
        n_topics: 20,
        hidden: 16,
    };
    CtrModel::new(cfg, seed).unwrap()
}

pub fn start(dir: &Path, model: Option<CtrModel>) -> RunningServer {
    let store = StoreHandle::open(dir, SequenceSchema::behavior_default(), StoreConfig::default()).unwrap();
    let service = Service::new(store, model, ServerConfig::default());
    Server::bind("127.0.0.1:0", service).unwrap().spawn().unwrap()
}

pub fn start_from_checkpoint(dir: &Path, ckpt: &Path) -> RunningServer {
    let model = CtrModel::from_checkpoint(&Checkpoint::load(ckpt).unwrap()).unwrap();
    start(dir, Some(model))
}

pub fn connect(server: &RunningServer) -> Client {
    let mut c = Client::connect(server.addr()).unwrap();
    c.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    c
}

/// Scores the same requests against two servers started one after the other
/// from one checkpoint and one store directory under `dir`.
pub fn scores_across_restart(dir: &Path, seed: u64) -> (Vec<ScoreResponse>, Vec<ScoreResponse>) {
    std::fs::create_dir_all(dir).unwrap();
    let ckpt = dir.join("model.lasr");
    small_model(seed).to_checkpoint().save(&ckpt).unwrap();
    let store_dir = dir.join("store");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requests: Vec<ScoreRequest> = (0..20)
        .map(|u| ScoreRequest {
            user: u,
            n: rng.gen_range(0..60),
            target: TargetItem {
                item: rng.gen_range(0..500),
                category: rng.gen_range(0..20),
            },
            request_time: 1_700_000_100,
        })
        .collect();
    let first = {
        let server = start_from_checkpoint(&store_dir, &ckpt);
        let mut c = connect(&server);
        for u in 0..20 {
            c.put(u, history(&mut rng, 30, 1_700_000_000)).unwrap();
        }
        let out: Vec<_> = requests.iter().map(|r| c.score(r).unwrap()).collect();
        drop(c);
        server.shutdown();
        out
    };
    // let the old connection thread see EOF and drop its store handle
    std::thread::sleep(Duration::from_millis(200));
    let server = start_from_checkpoint(&store_dir, &ckpt);
    let mut c = connect(&server);
    let second = requests.iter().map(|r| c.score(r).unwrap()).collect();
    (first, second)
}

/// `n` behaviour events one minute apart, newest first.
pub fn history(rng: &mut ChaCha8Rng, n: usize, newest: i64) -> Vec<BehaviorEvent> {
    (0..n)
        .map(|i| {
            let item = rng.gen_range(0..500u64);
            HistoryEvent {
                item,
                category: (item % 20) as u32,
                ts: newest - 60 * i as i64,
            }
            .to_behavior()
        })
        .collect()
}

fn random_request(rng: &mut ChaCha8Rng, schema: &SequenceSchema, id: u64) -> WireFrame {
    let user = rng.gen_range(0..40u64);
    let (op, payload) = match rng.gen_range(0..5) {
        0 => {
            let n = rng.gen_range(0..4);
            let newest = 1_700_000_000 + rng.gen_range(0..100_000);
            let put = laser_core::serving::PutRequest {
                user,
                events: history(rng, n, newest),
            };
            (Op::PutEvent, put.encode(schema))
        }
        1 => (
            Op::GetLastN,
            laser_core::serving::GetRequest {
                user,
                n: rng.gen_range(0..100),
            }
            .encode(),
        ),
        2 => (Op::Stats, Vec::new()),
        3 => (Op::Merge, Vec::new()),
        _ => (
            Op::Score,
            ScoreRequest {
                user,
                n: rng.gen(),
                target: laser_core::harness::TargetItem {
                    item: rng.gen(),
                    category: rng.gen(),
                },
                request_time: rng.gen(),
            }
            .encode(),
        ),
    };
    WireFrame::new(op, id, payload)
}

/// One fuzz frame: well-formed requests, random headers and payloads,
/// byte mutations after the length prefix, and corrupt length prefixes.
fn fuzz_bytes(rng: &mut ChaCha8Rng, schema: &SequenceSchema, id: u64) -> Vec<u8> {
    match rng.gen_range(0..10) {
        0..=2 => encode_frame(&random_request(rng, schema, id)),
        3..=5 => {
            let len = rng.gen_range(0..200);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut bytes = ((10 + len) as u32).to_le_bytes().to_vec();
            bytes.push(if rng.gen_bool(0.5) { rng.gen_range(0..6) } else { rng.gen() });
            bytes.push(if rng.gen_bool(0.7) { rng.gen_range(0..2) } else { rng.gen() });
            bytes.extend_from_slice(&id.to_le_bytes());
            bytes.extend_from_slice(&payload);
            bytes
        }
        6..=8 => {
            let mut bytes = encode_frame(&random_request(rng, schema, id));
            for _ in 0..rng.gen_range(1..4) {
                let at = rng.gen_range(4..bytes.len());
                bytes[at] ^= 1 << rng.gen_range(0..8);
            }
            bytes
        }
        _ => {
            let len: u32 = if rng.gen_bool(0.5) {
                rng.gen_range(0..10)
            } else {
                rng.gen_range(DEFAULT_MAX_FRAME as u32 + 1..=u32::MAX)
            };
            let mut bytes = len.to_le_bytes().to_vec();
            bytes.extend((0..rng.gen_range(0..20)).map(|_| rng.gen::<u8>()));
            bytes
        }
    }
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub frames: usize,
    pub ok_responses: usize,
    pub error_responses: usize,
    pub disconnects: usize,
}

/// Sends `frames` fuzz frames, checking each response against a local
/// decode of the same bytes. Panics on any protocol violation.
pub fn fuzz_server(server: &RunningServer, seed: u64, frames: usize) -> FuzzReport {
    let schema = SequenceSchema::behavior_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut client = connect(server);
    let mut report = FuzzReport::default();
    for i in 0..frames {
        let id = i as u64 + 1;
        let bytes = fuzz_bytes(&mut rng, &schema, id);
        report.frames += 1;
        client.send_raw(&bytes).unwrap();
        match decode_frame(&bytes, DEFAULT_MAX_FRAME) {
            Ok((req, used)) => {
                assert_eq!(used, bytes.len(), "frame {i}");
                let resp = client.recv().unwrap_or_else(|e| panic!("frame {i}: {e}"));
                assert_eq!(resp.request_id, req.request_id, "frame {i}");
                if resp.op == Op::Error {
                    report.error_responses += 1;
                } else {
                    assert_eq!(resp.op, req.op, "frame {i}");
                    report.ok_responses += 1;
                }
            }
            Err(e) if e.is_desync() => {
                let resp = client.recv().unwrap_or_else(|e| panic!("frame {i}: {e}"));
                assert_eq!((resp.op, resp.request_id), (Op::Error, 0), "frame {i}");
                assert!(matches!(client.recv(), Err(ServingError::Io(_))), "frame {i}: connection kept open");
                report.error_responses += 1;
                report.disconnects += 1;
                client = connect(server);
            }
            Err(FrameError::BadOp(_) | FrameError::BadFlags(_)) => {
                let resp = client.recv().unwrap_or_else(|e| panic!("frame {i}: {e}"));
                assert_eq!(resp.op, Op::Error, "frame {i}");
                assert_eq!(resp.request_id, u64::from_le_bytes(bytes[6..14].try_into().unwrap()), "frame {i}");
                report.error_responses += 1;
            }
            Err(e) => panic!("frame {i}: fuzzer built an unexpected frame: {e}"),
        }
    }
    report
}
