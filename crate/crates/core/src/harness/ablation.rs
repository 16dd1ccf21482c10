//! Seeded grids of training runs that differ in one setting.

use serde::{Deserialize, Serialize};

use super::model::{CtrConfig, CtrModel, EncoderKind};
use super::synth::{Corpus, SynthConfig};
use super::train::{train, TrainConfig};
use super::HarnessError;
use crate::attention::GateKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationCell {
    Full,
    SoftmaxGate,
    NoFusion,
    NoRecency,
    SegmentW(usize),
    Encoder(EncoderKind),
}

impl AblationCell {
    pub fn name(&self) -> String {
        match self {
            AblationCell::Full => "full".into(),
            AblationCell::SoftmaxGate => "softmax".into(),
            AblationCell::NoFusion => "no_fusion".into(),
            AblationCell::NoRecency => "no_recency".into(),
            AblationCell::SegmentW(w) => format!("w{w}"),
            AblationCell::Encoder(k) => k.name().into(),
        }
    }

    /// Accepts the names produced by [`AblationCell::name`].
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "softmax" => Some(Self::SoftmaxGate),
            "no_fusion" => Some(Self::NoFusion),
            "no_recency" => Some(Self::NoRecency),
            _ => {
                if let Some(w) = s.strip_prefix('w').and_then(|w| w.parse().ok()) {
                    Some(Self::SegmentW(w))
                } else {
                    EncoderKind::parse(s).map(Self::Encoder)
                }
            }
        }
    }

    pub fn apply(&self, base: &CtrConfig) -> CtrConfig {
        let mut c = base.clone();
        match *self {
            AblationCell::Full => {}
            AblationCell::SoftmaxGate => c.laser.gate = GateKind::Softmax,
            AblationCell::NoFusion => c.laser.use_fusion = false,
            AblationCell::NoRecency => c.laser.use_recency = false,
            AblationCell::SegmentW(w) => c.laser.segment_w = w,
            AblationCell::Encoder(k) => c.encoder = k,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// `mean_auc` minus the first cell's `mean_auc`.
    pub delta: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl AblationGrid {
    pub fn get(&self, cell: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell == cell)
    }
}

/// Trains every cell once per seed. The seed picks the corpus, the model
/// init and the shuffle; all cells of one seed share the corpus.
pub fn eval_ablations(
    synth: &SynthConfig,
    base: &CtrConfig,
    train_cfg: &TrainConfig,
    cells: &[AblationCell],
    seeds: &[u64],
) -> Result<AblationGrid, HarnessError> {
    let mut aucs = vec![Vec::with_capacity(seeds.len()); cells.len()];
    let mut secs = vec![0.0; cells.len()];
    for &seed in seeds {
        let corpus = Corpus::generate(SynthConfig {
            seed,
            ..synth.clone()
        })?;
        let (tr, va) = corpus.split(train_cfg.val_fraction);
        for (ci, cell) in cells.iter().enumerate() {
            let t0 = std::time::Instant::now();
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let mut model = CtrModel::new(cell.apply(base), seed)?;
            let report = train(&mut model, &corpus, &tr, &va, &tc)?;
            aucs[ci].push(report.final_eval.auc);
            secs[ci] += t0.elapsed().as_secs_f64();
        }
    }
    let means: Vec<f64> = aucs.iter().map(|a| a.iter().sum::<f64>() / a.len().max(1) as f64).collect();
    let cells = cells
        .iter()
        .zip(aucs)
        .zip(&means)
        .zip(secs)
        .map(|(((cell, aucs), &mean), seconds)| CellResult {
            cell: cell.name(),
            aucs,
            mean_auc: mean,
            delta: mean - means[0],
            seconds,
        })
        .collect();
    Ok(AblationGrid {
        seeds: seeds.to_vec(),
        cells,
    })
}
