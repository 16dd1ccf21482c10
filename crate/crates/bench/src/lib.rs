//! Criterion benchmarks live under `benches/`. Run them with
//! `cargo bench -p laser-bench`.
