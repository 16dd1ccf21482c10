//! Reference model of the store and a randomized workload that checks the
//! real store against it, including injected crashes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use laser_core::store::{
    BehaviorEvent, FaultPoint, FieldKind, FieldSpec, SequenceSchema, StoreConfig, StoreError, StoreHandle, Value,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-user map from `(timestamp, item)` to the latest acknowledged event.
#[derive(Default)]
pub struct Model {
    users: HashMap<u64, BTreeMap<(i64, u64), BehaviorEvent>>,
}

impl Model {
    pub fn append(&mut self, schema: &SequenceSchema, user: u64, ev: BehaviorEvent) {
        self.users.entry(user).or_default().insert(ev.key(schema), ev);
    }

    pub fn last_n(&self, user: u64, n: usize) -> Vec<BehaviorEvent> {
        self.users
            .get(&user)
            .map(|m| m.values().rev().take(n).cloned().collect())
            .unwrap_or_default()
    }

    pub fn users(&self) -> Vec<u64> {
        let mut u: Vec<u64> = self.users.keys().copied().collect();
        u.sort_unstable();
        u
    }
}

/// Item id, scenario, action, timestamp, one score: the integral-heavy
/// reference layout.
pub fn reference_schema() -> SequenceSchema {
    SequenceSchema::new(vec![
        FieldSpec::new("item_id", FieldKind::U64Id),
        FieldSpec::new("scenario", FieldKind::U32Enum),
        FieldSpec::new("action", FieldKind::U32Enum),
        FieldSpec::new("ts", FieldKind::I64Timestamp),
        FieldSpec::new("score", FieldKind::F32),
    ])
    .unwrap()
}

/// `n` events one second apart, newest first.
pub fn reference_events(rng: &mut ChaCha8Rng, n: usize) -> Vec<BehaviorEvent> {
    let start = 1_700_000_000i64;
    (0..n)
        .map(|i| BehaviorEvent {
            values: vec![
                Value::U64(rng.gen_range(0..1_000_000)),
                Value::U32(rng.gen_range(0..3)),
                Value::U32(rng.gen_range(0..5)),
                Value::I64(start - i as i64),
                Value::F32(rng.gen::<f32>()),
            ],
        })
        .collect()
}

fn random_event(rng: &mut ChaCha8Rng) -> BehaviorEvent {
    let nullable = |rng: &mut ChaCha8Rng, v: Value| if rng.gen_bool(0.3) { Value::Null } else { v };
    let sim = Value::F32(f32::from_bits(rng.gen()));
    let emb = Value::U64(rng.gen());
    BehaviorEvent {
        values: vec![
            Value::U64(rng.gen_range(0..30)),
            Value::U32(rng.gen_range(0..300)),
            Value::U32(rng.gen_range(0..3)),
            Value::U32(rng.gen_range(0..70_000)),
            Value::I64(rng.gen_range(1..400)),
            nullable(rng, sim),
            nullable(rng, emb),
        ],
    }
}

/// Events with every field drawn from its full range, including nulls and
/// arbitrary float bit patterns, newest first.
pub fn arbitrary_sorted_events(rng: &mut ChaCha8Rng, schema: &SequenceSchema, n: usize) -> Vec<BehaviorEvent> {
    let mut evs: Vec<BehaviorEvent> = (0..n)
        .map(|_| BehaviorEvent {
            values: vec![
                Value::U64(rng.gen()),
                Value::U32(rng.gen_range(0..3)),
                Value::U32(rng.gen()),
                Value::U32(rng.gen_range(0..300)),
                Value::I64(rng.gen_range(1..i64::MAX)),
                if rng.gen_bool(0.5) { Value::Null } else { Value::F32(f32::from_bits(rng.gen())) },
                if rng.gen_bool(0.5) { Value::Null } else { Value::U64(rng.gen()) },
            ],
        })
        .collect();
    evs.sort_by_key(|e| std::cmp::Reverse(e.key(schema)));
    evs
}

#[derive(Debug, Default)]
pub struct WorkloadReport {
    pub ops: usize,
    pub acked_appends: usize,
    pub reads: usize,
    pub merges: usize,
    pub crashes: usize,
    pub disk_full: usize,
    pub reopens: usize,
    pub max_extent_reads_per_get: u64,
}

pub fn workload_config() -> StoreConfig {
    StoreConfig {
        max_tail_events: 8,
        segment_bytes: 4096,
        ..StoreConfig::default()
    }
}

fn open(dir: &Path) -> StoreHandle {
    StoreHandle::open(dir, SequenceSchema::behavior_default(), workload_config()).expect("reopen succeeds")
}

fn check_user(store: &StoreHandle, model: &Model, user: u64, n: usize, report: &mut WorkloadReport, op: usize) {
    let before = store.io_counters().extent_reads;
    let got = store.get_last_n(user, n).expect("read succeeds");
    let reads = store.io_counters().extent_reads - before;
    report.max_extent_reads_per_get = report.max_extent_reads_per_get.max(reads);
    assert!(reads <= 1, "op {op}: get_last_n issued {reads} extent reads");
    assert_eq!(got, model.last_n(user, n), "op {op}: user {user} n {n}");
    report.reads += 1;
}

/// Random appends, reads, merges, clean reopens and injected crashes on one
/// store directory, checked against [`Model`] after every step.
pub fn random_workload(dir: &Path, seed: u64, ops: usize) -> WorkloadReport {
    let schema = SequenceSchema::behavior_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::default();
    let mut store = open(dir);
    let mut report = WorkloadReport::default();
    let faults = [
        FaultPoint::JournalTornWrite,
        FaultPoint::BeforeBlockWrite,
        FaultPoint::TornBlockWrite,
        FaultPoint::AfterBlockWrite,
        FaultPoint::AfterRepoint,
        FaultPoint::DiskFull,
    ];
    for op in 0..ops {
        report.ops += 1;
        let roll = rng.gen_range(0..100);
        let user = rng.gen_range(1..16u64);
        let outcome: Result<(), StoreError> = match roll {
            0..=54 => {
                let ev = random_event(&mut rng);
                let r = store.append_event(user, ev.clone());
                if r.is_ok() {
                    model.append(&schema, user, ev);
                    report.acked_appends += 1;
                }
                r
            }
            55..=84 => {
                let n = rng.gen_range(1..60);
                check_user(&store, &model, user, n, &mut report, op);
                Ok(())
            }
            85..=92 => {
                report.merges += 1;
                let filter: Vec<u64> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(1..16)).collect();
                let r = if filter.is_empty() {
                    store.run_merge(None)
                } else {
                    store.run_merge(Some(&filter))
                };
                r.map(|_| ())
            }
            93..=94 => {
                store.close().unwrap();
                assert!(matches!(store.get_last_n(user, 1), Err(StoreError::Closed)));
                store = open(dir);
                report.reopens += 1;
                Ok(())
            }
            _ => {
                let point = faults[rng.gen_range(0..faults.len())];
                store.inject_fault(point, rng.gen_range(0..2));
                Ok(())
            }
        };
        match outcome {
            Ok(()) => {}
            Err(StoreError::InjectedCrash(_)) => {
                report.crashes += 1;
                assert!(matches!(store.get_last_n(user, 1), Err(StoreError::Poisoned)));
                drop(store);
                store = open(dir);
                report.reopens += 1;
                for u in model.users() {
                    check_user(&store, &model, u, usize::MAX, &mut report, op);
                }
            }
            Err(StoreError::DiskFull) => report.disk_full += 1,
            Err(e) => panic!("op {op}: unexpected error {e}"),
        }
        if op % 500 == 499 {
            for u in model.users() {
                check_user(&store, &model, u, usize::MAX, &mut report, op);
            }
        }
    }
    drop(store);
    let store = open(dir);
    for u in model.users() {
        check_user(&store, &model, u, usize::MAX, &mut report, ops);
    }
    report
}
