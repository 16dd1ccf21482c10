use laser_core::attention::{LaserConfig, LaserParams, LaserSession, Parameters, SequenceBatchInput};
use laser_core::tensor::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::{reference_forward_with_pattern, smooth_central_diff};

pub fn random_input(rng: &mut ChaCha8Rng, cfg: &LaserConfig, rows: usize, valid: usize) -> SequenceBatchInput {
    let d = cfg.embed_dim;
    let request_time = 1_700_000_000i64;
    let mut ts = Vec::with_capacity(rows);
    let mut t = request_time;
    for _ in 0..rows {
        t -= rng.gen_range(1..5000);
        ts.push(t);
    }
    SequenceBatchInput {
        tokens: Matrix::from_fn(rows, d, |_, _| rng.gen_range(-1.0..1.0)),
        timestamps: ts,
        request_time,
        valid_len: valid,
        target: Vector::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    }
}

/// Parameters with every tensor (including LN, biases and the recency table)
/// moved away from its special initial value so every gradient is exercised.
pub fn perturbed_params(cfg: &LaserConfig, rng: &mut ChaCha8Rng) -> LaserParams {
    let mut p = LaserParams::init(cfg, rng);
    for (name, t) in p.tensors_mut() {
        let amp = if name.starts_with("sta.ln_gain") { 0.3 } else { 0.2 };
        for x in t.iter_mut() {
            *x += rng.gen_range(-amp..amp);
        }
    }
    p
}

pub fn gradcheck_cfg() -> LaserConfig {
    LaserConfig::new(20, 8, 4, 5, 2)
}

fn weighted_loss(out: &[f64], upstream: &[f32]) -> f64 {
    out.iter().zip(upstream).map(|(a, b)| a * *b as f64).sum()
}

#[derive(Default)]
pub struct CheckStats {
    pub checked: usize,
    pub kinks: usize,
    pub failed: Vec<String>,
}

fn compare(stats: &mut CheckStats, name: &str, analytic: &[f32], numeric: &[Option<f64>]) {
    for (i, (&a, n)) in analytic.iter().zip(numeric).enumerate() {
        let Some(n) = *n else {
            stats.kinks += 1;
            continue;
        };
        if (a as f64).abs() <= 1e-4 && n.abs() <= 1e-4 {
            continue;
        }
        stats.checked += 1;
        let rel = (a as f64 - n).abs() / (a as f64).abs().max(n.abs());
        if rel > 2e-2 {
            stats.failed.push(format!("{name}[{i}]: analytic {a:e} numeric {n:e} rel {rel:.3e}"));
        }
    }
}

const FD_STEP: f32 = 1e-3;

pub fn run_gradcheck(cfg: &LaserConfig, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = perturbed_params(cfg, &mut rng);
    let input = random_input(&mut rng, cfg, 20, 17);
    let upstream: Vec<f32> = (0..cfg.fused_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut sess = LaserSession::new(cfg, &params);
    sess.forward(&input).unwrap();
    let grads = sess.backward(&upstream).unwrap();

    let eval = |inp: &SequenceBatchInput, p: &LaserParams| {
        let (out, pattern) = reference_forward_with_pattern(inp, p, cfg);
        (weighted_loss(&out, &upstream), pattern)
    };
    let mut stats = CheckStats::default();
    let analytic = grads.params.tensors();
    for (t, (name, view)) in params.tensors().into_iter().enumerate() {
        let numeric = smooth_central_diff(view.data(), FD_STEP, |x| {
            let mut probe = params.clone();
            probe.tensors_mut()[t].1.copy_from_slice(x);
            eval(&input, &probe)
        });
        compare(&mut stats, &name, analytic[t].1.data(), &numeric);
    }
    let tok = smooth_central_diff(input.tokens.data(), FD_STEP, |x| {
        let mut inp = input.clone();
        inp.tokens = Matrix::from_vec(20, cfg.embed_dim, x.to_vec());
        eval(&inp, &params)
    });
    compare(&mut stats, "tokens", grads.tokens.data(), &tok);
    let tgt = smooth_central_diff(input.target.data(), FD_STEP, |x| {
        let mut inp = input.clone();
        inp.target = Vector::from_vec(x.to_vec());
        eval(&inp, &params)
    });
    compare(&mut stats, "target", grads.target.data(), &tgt);
    stats
}
