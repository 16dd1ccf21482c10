use laser_core::attention::{sta_naive, sta_vectorized, LaserConfig};
use laser_core::harness::bench::{median_secs, random_laser_input};
use laser_core::harness::{
    eval_ablations, train, AblationCell, Corpus, CtrConfig, CtrModel, EncoderKind, HistoryLen, OptimizerKind,
    SynthConfig, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clean_corpus(users: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_users: users,
        n_items: 1000,
        history_len: HistoryLen { min: 100, max: 100 },
        planted_rate: 0.02,
        p_hi: 1.0,
        p_lo: 0.0,
        seed,
        ..SynthConfig::default()
    }
}

fn model_config(encoder: EncoderKind) -> CtrConfig {
    CtrConfig {
        encoder,
        laser: LaserConfig::new(100, 32, 8, 10, 2),
        n_items: 1000,
        hidden: 64,
        ..CtrConfig::default()
    }
}

fn adam() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        lr: 0.002,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    }
}

#[test]
fn clean_labels_reach_high_auc_with_falling_loss() {
    for seed in [1u64, 2, 3] {
        let corpus = Corpus::generate(clean_corpus(60_000, seed)).unwrap();
        let (tr, va) = corpus.split(0.2);
        let mut model = CtrModel::new(model_config(EncoderKind::Laser), seed).unwrap();
        let report = train(&mut model, &corpus, &tr, &va, &TrainConfig { seed, ..adam() }).unwrap();
        assert!(report.final_eval.auc >= 0.95, "seed {seed}: AUC {}", report.final_eval.auc);

        // 10-batch windows at each tenth of the run, plus the last one
        let losses = &report.batch_losses;
        let starts: Vec<usize> = (0..10).map(|k| k * (losses.len() - 10) / 10).chain([losses.len() - 10]).collect();
        let windows: Vec<(f64, f64)> = starts
            .iter()
            .map(|&s| {
                let w = &losses[s..s + 10];
                let mean = w.iter().sum::<f64>() / 10.0;
                let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
                (mean, (var / 10.0).sqrt())
            })
            .collect();
        for pair in windows.windows(2) {
            let ((a, sa), (b, sb)) = (pair[0], pair[1]);
            let noise = 3.0 * (sa * sa + sb * sb).sqrt();
            assert!(b <= a + noise, "seed {seed}: moving average rose from {a} to {b} (3 s.e. {noise}) in {windows:?}");
        }
        let samples: Vec<f64> = windows.iter().map(|w| w.0).collect();
        assert!(samples[10] < 0.5 * samples[0], "seed {seed}: {samples:?}");
    }
}

#[test]
fn din_beats_mean_pool() {
    let grid = eval_ablations(
        &clean_corpus(30_000, 0),
        &model_config(EncoderKind::Din),
        &adam(),
        &[AblationCell::Encoder(EncoderKind::Din), AblationCell::Encoder(EncoderKind::MeanPool)],
        &[1],
    )
    .unwrap();
    let (din, pool) = (grid.cells[0].mean_auc, grid.cells[1].mean_auc);
    assert!(din > pool, "din {din} mean_pool {pool}");
}

#[test]
fn vectorized_sta_is_faster_than_naive_at_1000() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cfg, params, input) = random_laser_input(1000, &mut rng);
    let mask = vec![true; 1000];
    let naive = median_secs(31, || {
        sta_naive(&input.target, &input.tokens, &params.sta, &cfg, &mask).unwrap();
    });
    let vectorized = median_secs(31, || {
        sta_vectorized(&input.target, &input.tokens, &params.sta, &cfg, &mask).unwrap();
    });
    assert!(vectorized < naive, "vectorized {vectorized:e}s naive {naive:e}s");
}

#[test]
fn sigmoid_beats_softmax_on_a_high_noise_corpus() {
    let synth = SynthConfig {
        distractor_rate: 0.3,
        planted_rate: 0.1,
        p_hi: 0.9,
        p_lo: 0.1,
        ..clean_corpus(40_000, 0)
    };
    let grid = eval_ablations(
        &synth,
        &model_config(EncoderKind::Laser),
        &adam(),
        &[AblationCell::Full, AblationCell::SoftmaxGate],
        &[1],
    )
    .unwrap();
    let (sigmoid, softmax) = (grid.cells[0].mean_auc, grid.cells[1].mean_auc);
    assert!(sigmoid > softmax, "sigmoid {sigmoid} softmax {softmax}");
}
