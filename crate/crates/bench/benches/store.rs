use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use laser_core::harness::HistoryEvent;
use laser_core::store::{pack_block, BehaviorEvent, SequenceSchema, StoreConfig, StoreHandle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn events(rng: &mut ChaCha8Rng, n: usize) -> Vec<BehaviorEvent> {
    (0..n)
        .map(|i| {
            let item = rng.gen_range(0..10_000u64);
            HistoryEvent {
                item,
                category: (item % 100) as u32,
                ts: 1_700_000_000 - 30 * i as i64,
            }
            .to_behavior()
        })
        .collect()
}

fn append(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let store = StoreHandle::open(dir.path(), SequenceSchema::behavior_default(), StoreConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pool = events(&mut rng, 4096);
    let mut k = 0usize;
    c.bench_function("store/append_event", |b| {
        b.iter(|| {
            k += 1;
            store.append_event((k % 500) as u64, pool[k % pool.len()].clone()).unwrap()
        })
    });
}

fn get_last_n(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let store = StoreHandle::open(dir.path(), SequenceSchema::behavior_default(), StoreConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for u in 0..100 {
        for ev in events(&mut rng, 1000) {
            store.append_event(u, ev).unwrap();
        }
    }
    store.run_merge(None).unwrap();
    let mut group = c.benchmark_group("store/get_last_n");
    for n in [100usize, 1000] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter_batched(|| rng.gen_range(0..100u64), |u| store.get_last_n(u, n).unwrap(), BatchSize::SmallInput)
        });
    }
    group.finish();
}

fn pack(c: &mut Criterion) {
    let schema = SequenceSchema::behavior_default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let evs = events(&mut rng, 1000);
    c.bench_function("store/pack_block_1000", |b| b.iter(|| pack_block(&schema, 7, 1, &evs)));
}

criterion_group!(benches, append, get_last_n, pack);
criterion_main!(benches);
