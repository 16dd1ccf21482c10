//! Wall-clock suites for attention, the store and the wire protocol.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::HistoryEvent;
use super::HarnessError;
use crate::attention::{laser_forward, sta_naive, sta_vectorized, LaserConfig, LaserParams, SequenceBatchInput};
use crate::serving::{Client, GetRequest, Op, PutRequest, Server, ServerConfig, Service};
use crate::store::{SequenceSchema, StoreConfig, StoreHandle};
use crate::tensor::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Attention,
    Store,
    Wire,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" => Some(Self::Attention),
            "store" => Some(Self::Store),
            "wire" => Some(Self::Wire),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    LinearFit { slope, intercept, r2 }
}

/// Value at quantile `q` of `xs` (nearest rank).
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let rank = ((q * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
    xs[rank - 1]
}

/// Median of `reps` timed runs of `f`, after one warm-up run, in seconds.
pub fn median_secs(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut t: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    quantile(&mut t, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub param: u64,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: Suite,
    pub rows: Vec<BenchRow>,
    pub fit: Option<LinearFit>,
}

impl BenchReport {
    fn push(&mut self, name: &str, param: u64, value: f64, unit: &str) {
        self.rows.push(BenchRow {
            name: name.into(),
            param,
            value,
            unit: unit.into(),
        });
    }

    pub fn get(&self, name: &str, param: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name && r.param == param).map(|r| r.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub store_users: usize,
    pub store_events: usize,
    pub wire_frames: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            lengths: vec![500, 1000, 2000, 4000],
            reps: 15,
            store_users: 200,
            store_events: 20_000,
            wire_frames: 2_000,
            seed: 7,
        }
    }
}

/// Desk-scale LASER shapes with random parameters and tokens.
pub fn random_laser_input(l: usize, rng: &mut ChaCha8Rng) -> (LaserConfig, LaserParams, SequenceBatchInput) {
    let cfg = LaserConfig::new(l, 32, 8, 10, 2);
    let params = LaserParams::init(&cfg, rng);
    let input = SequenceBatchInput {
        tokens: Matrix::from_fn(l, 32, |_, _| rng.gen_range(-1.0..1.0)),
        timestamps: (0..l as i64).map(|i| 1_700_000_000 - 60 * i).collect(),
        request_time: 1_700_000_000,
        valid_len: l,
        target: Vector::from_vec((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    };
    (cfg, params, input)
}

/// Median LASER forward time at each length, in seconds.
pub fn laser_forward_times(lengths: &[usize], reps: usize, seed: u64) -> Result<Vec<f64>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&l| {
            let (cfg, params, input) = random_laser_input(l, &mut rng);
            laser_forward(&input, &params, &cfg)?;
            Ok(median_secs(reps, || {
                let _ = laser_forward(&input, &params, &cfg);
            }))
        })
        .collect()
}

pub fn attention_suite(opts: &BenchOptions) -> Result<BenchReport, HarnessError> {
    let mut report = BenchReport {
        suite: Suite::Attention,
        rows: Vec::new(),
        fit: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut forward = Vec::new();
    for &l in &opts.lengths {
        let (cfg, params, input) = random_laser_input(l, &mut rng);
        let mask = vec![true; l];
        let naive = median_secs(opts.reps, || {
            let _ = sta_naive(&input.target, &input.tokens, &params.sta, &cfg, &mask);
        });
        let vectorized = median_secs(opts.reps, || {
            let _ = sta_vectorized(&input.target, &input.tokens, &params.sta, &cfg, &mask);
        });
        laser_forward(&input, &params, &cfg)?;
        let fwd = median_secs(opts.reps, || {
            let _ = laser_forward(&input, &params, &cfg);
        });
        report.push("sta_naive", l as u64, naive * 1e3, "ms");
        report.push("sta_vectorized", l as u64, vectorized * 1e3, "ms");
        report.push("laser_forward", l as u64, fwd * 1e3, "ms");
        forward.push(fwd);
    }
    if opts.lengths.len() >= 2 {
        let xs: Vec<f64> = opts.lengths.iter().map(|&l| l as f64).collect();
        report.fit = Some(linear_fit(&xs, &forward));
    }
    Ok(report)
}

fn synthetic_events(rng: &mut ChaCha8Rng, n: usize, newest: i64) -> Vec<HistoryEvent> {
    (0..n)
        .map(|i| {
            let item = rng.gen_range(0..10_000u64);
            HistoryEvent {
                item,
                category: (item % 100) as u32,
                ts: newest - 30 * i as i64,
            }
        })
        .collect()
}

/// Append and `get_last_n` latency on a fresh store in `dir`.
pub fn store_suite(dir: &Path, opts: &BenchOptions) -> Result<BenchReport, HarnessError> {
    let store_err = |e: crate::store::StoreError| HarnessError::Config(format!("store: {e}"));
    let store = StoreHandle::open(dir, SequenceSchema::behavior_default(), StoreConfig::default()).map_err(store_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let users = opts.store_users.max(1);
    let per_user = opts.store_events / users;
    let mut appends = Vec::with_capacity(opts.store_events);
    let t0 = Instant::now();
    for k in 0..per_user {
        for u in 0..users as u64 {
            let ev = synthetic_events(&mut rng, 1, 1_700_000_000 + k as i64)[0].to_behavior();
            let s = Instant::now();
            store.append_event(u, ev).map_err(store_err)?;
            appends.push(s.elapsed().as_secs_f64());
        }
    }
    let append_total = t0.elapsed().as_secs_f64();
    let merge = Instant::now();
    store.run_merge(None).map_err(store_err)?;
    let merge_secs = merge.elapsed().as_secs_f64();
    let mut gets = Vec::new();
    let t1 = Instant::now();
    for _ in 0..opts.store_events.min(20_000) {
        let u = rng.gen_range(0..users as u64);
        let s = Instant::now();
        store.get_last_n(u, 100).map_err(store_err)?;
        gets.push(s.elapsed().as_secs_f64());
    }
    let get_total = t1.elapsed().as_secs_f64();
    let mut report = BenchReport {
        suite: Suite::Store,
        rows: Vec::new(),
        fit: None,
    };
    report.push("append_throughput", appends.len() as u64, appends.len() as f64 / append_total, "ops/s");
    report.push("append_p50", 0, quantile(&mut appends, 0.5) * 1e6, "us");
    report.push("append_p99", 0, quantile(&mut appends, 0.99) * 1e6, "us");
    report.push("merge", per_user as u64, merge_secs * 1e3, "ms");
    report.push("get_last_n_throughput", 100, gets.len() as f64 / get_total, "ops/s");
    report.push("get_last_n_p50", 100, quantile(&mut gets, 0.5) * 1e6, "us");
    report.push("get_last_n_p99", 100, quantile(&mut gets, 0.99) * 1e6, "us");
    store.close().map_err(store_err)?;
    Ok(report)
}

/// Pipelined `GetLastN` frames per second against a local server, with
/// and without payload compression. Stores live under `dir`.
pub fn wire_suite(dir: &Path, opts: &BenchOptions) -> Result<BenchReport, HarnessError> {
    let err = |e: crate::serving::ServingError| HarnessError::Config(format!("wire: {e}"));
    let mut report = BenchReport {
        suite: Suite::Wire,
        rows: Vec::new(),
        fit: None,
    };
    let schema = SequenceSchema::behavior_default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let history: Vec<_> = synthetic_events(&mut rng, 1000, 1_700_000_000)
        .iter()
        .map(HistoryEvent::to_behavior)
        .collect();
    for (name, compress) in [("frames_per_sec_compressed", true), ("frames_per_sec_raw", false)] {
        let store = StoreHandle::open(dir.join(name), schema.clone(), StoreConfig::default())
            .map_err(|e| HarnessError::Config(format!("store: {e}")))?;
        let config = ServerConfig {
            compress,
            ..ServerConfig::default()
        };
        let server = Server::bind("127.0.0.1:0", Service::new(store, None, config)).map_err(err)?.spawn().map_err(err)?;
        let mut client = Client::connect(server.addr()).map_err(err)?;
        client.set_compression(compress);
        client.put(1, history.clone()).map_err(err)?;
        let request = GetRequest { user: 1, n: 1000 }.encode();
        let put = PutRequest {
            user: 2,
            events: history[..1].to_vec(),
        }
        .encode(&schema);
        let start = Instant::now();
        let mut bytes = 0usize;
        for chunk in 0..opts.wire_frames.div_ceil(100) {
            let n = 100.min(opts.wire_frames - chunk * 100);
            for k in 0..n {
                if k % 10 == 0 {
                    client.send(Op::PutEvent, &put).map_err(err)?;
                } else {
                    client.send(Op::GetLastN, &request).map_err(err)?;
                }
            }
            for _ in 0..n {
                bytes += client.recv().map_err(err)?.payload.len();
            }
        }
        let secs = start.elapsed().as_secs_f64();
        report.push(name, opts.wire_frames as u64, opts.wire_frames as f64 / secs, "frames/s");
        report.push(&format!("{name}_payload_mb"), opts.wire_frames as u64, bytes as f64 / 1e6, "MB");
        drop(client);
        server.shutdown();
    }
    Ok(report)
}
