use laser_core::attention::{laser_forward, LaserConfig, LaserParams, SequenceBatchInput};
use laser_core::flops::flops_laser;
use laser_core::tensor::{flop_counter, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn instrumented_forward_tracks_the_model() {
    let cfg = LaserConfig::new(1000, 128, 32, 10, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = LaserParams::init(&cfg, &mut rng);
    let input = SequenceBatchInput {
        tokens: Matrix::from_fn(1000, 128, |_, _| rng.gen_range(-1.0..1.0)),
        timestamps: (0..1000).map(|i| 1_000_000 - i * 60).collect(),
        request_time: 1_000_000,
        valid_len: 1000,
        target: Vector::from_vec((0..128).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    };
    let (_, flops, macs) = flop_counter::measure_both(|| laser_forward(&input, &params, &cfg).unwrap());
    let model = flops_laser(&cfg).total;
    let mac_ratio = macs as f64 / model;
    let flop_ratio = flops as f64 / model;
    println!("macs {macs} flops {flops} model {model} mac ratio {mac_ratio:.4} flop ratio {flop_ratio:.4}");
    assert!((0.5..=2.0).contains(&mac_ratio), "multiply-add ratio {mac_ratio}");
    // one FLOP per multiply and per add doubles every product term
    assert!((1.0..=2.1).contains(&flop_ratio), "flop ratio {flop_ratio}");
}
