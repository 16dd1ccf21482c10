//! Mini-batch training and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, logloss};
use super::model::CtrModel;
use super::synth::{Corpus, SampleKind};
use super::HarnessError;
use crate::attention::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub clip_norm: f32,
    pub optimizer: OptimizerKind,
    /// Seeds the model init and the per-epoch shuffle.
    pub seed: u64,
    /// Validation AUC is recorded every this many steps and after the last
    /// step. 0 records only at the end.
    pub eval_every: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr: 0.1,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            eval_every: 0,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: usize,
    pub clicks: usize,
    pub mean_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub logloss: f64,
    pub n_samples: usize,
    pub per_kind: BTreeMap<String, KindStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub epoch: usize,
    /// Mean batch loss since the previous trace point.
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean loss of every batch, in order.
    pub batch_losses: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub final_eval: EvalReport,
}

fn kind_name(k: SampleKind) -> &'static str {
    match k {
        SampleKind::Planted => "planted",
        SampleKind::FreshIntent => "fresh_intent",
        SampleKind::StaleIntent => "stale_intent",
        SampleKind::Background => "background",
    }
}

/// Scores and labels of `indices`, in order.
pub fn predict_all(model: &CtrModel, corpus: &Corpus, indices: &[usize]) -> Result<(Vec<f64>, Vec<bool>), HarnessError> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = corpus.sample(i);
        let input = model.input(&s.history, s.meta.target, s.meta.request_time);
        preds.push(model.predict(&input)?.prob);
        labels.push(s.meta.label);
    }
    Ok((preds, labels))
}

pub fn evaluate(model: &CtrModel, corpus: &Corpus, indices: &[usize]) -> Result<EvalReport, HarnessError> {
    let (preds, labels) = predict_all(model, corpus, indices)?;
    let mut per_kind: BTreeMap<String, KindStats> = BTreeMap::new();
    for ((&i, &p), &y) in indices.iter().zip(&preds).zip(&labels) {
        let e = per_kind
            .entry(kind_name(corpus.samples[i].kind).to_string())
            .or_insert(KindStats {
                count: 0,
                clicks: 0,
                mean_pred: 0.0,
            });
        e.count += 1;
        e.clicks += y as usize;
        e.mean_pred += p;
    }
    for s in per_kind.values_mut() {
        s.mean_pred /= s.count as f64;
    }
    Ok(EvalReport {
        auc: auc(&preds, &labels)?,
        logloss: logloss(&preds, &labels),
        n_samples: preds.len(),
        per_kind,
    })
}

pub const ADAGRAD_INIT_ACC: f32 = 0.1;
pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

enum OptState {
    Sgd,
    Adagrad(CtrModel),
    Adam { m: CtrModel, v: CtrModel, t: i32 },
}

struct Optimizer {
    lr: f32,
    clip: f32,
    state: OptState,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, model: &CtrModel) -> Self {
        let state = match cfg.optimizer {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adagrad => {
                let mut acc = model.zeros_like();
                for (name, t) in acc.tensors_mut() {
                    if !name.starts_with("ctr.") {
                        t.iter_mut().for_each(|x| *x = ADAGRAD_INIT_ACC);
                    }
                }
                OptState::Adagrad(acc)
            }
            OptimizerKind::Adam => OptState::Adam {
                m: model.zeros_like(),
                v: model.zeros_like(),
                t: 0,
            },
        };
        Self {
            lr: cfg.lr,
            clip: cfg.clip_norm,
            state,
        }
    }

    /// Clips `grads` to the global norm bound, then updates `model`.
    fn step(&mut self, model: &mut CtrModel, grads: &mut CtrModel) {
        let norm = grads.sum_squares().sqrt() as f32;
        if self.clip > 0.0 && norm > self.clip {
            grads.scale_all(self.clip / norm);
        }
        let lr = self.lr;
        match &mut self.state {
            OptState::Adagrad(acc) => {
                let g = grads.tensors();
                for (((_, p), (_, a)), (_, g)) in model.tensors_mut().into_iter().zip(acc.tensors_mut()).zip(g) {
                    for ((p, a), &g) in p.iter_mut().zip(a.iter_mut()).zip(g.data()) {
                        if g != 0.0 {
                            *a += g * g;
                            *p -= lr * g / a.sqrt();
                        }
                    }
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                let step = lr * c2.sqrt() / c1;
                let g = grads.tensors();
                let params = model.tensors_mut().into_iter().zip(m.tensors_mut()).zip(v.tensors_mut()).zip(g);
                for ((((_, p), (_, m)), (_, v)), (_, g)) in params {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= step * *m / (v.sqrt() + ADAM_EPS);
                    }
                }
            }
            OptState::Sgd => {
                for ((_, p), (_, g)) in model.tensors_mut().into_iter().zip(grads.tensors()) {
                    crate::tensor::axpy(p, -lr, g.data());
                }
            }
        }
    }
}

fn trace_point(
    model: &CtrModel,
    corpus: &Corpus,
    val_idx: &[usize],
    step: usize,
    epoch: usize,
    since: &mut (f64, usize),
) -> Result<TracePoint, HarnessError> {
    let e = evaluate(model, corpus, val_idx)?;
    let train_loss = if since.1 > 0 { since.0 / since.1 as f64 } else { f64::NAN };
    *since = (0.0, 0);
    Ok(TracePoint {
        step,
        epoch,
        train_loss,
        val_auc: e.auc,
        val_logloss: e.logloss,
    })
}

/// Trains `model` in place over `train_idx` for `cfg.epochs` epochs.
/// Deterministic for a given model, corpus and config.
pub fn train(
    model: &mut CtrModel,
    corpus: &Corpus,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport, HarnessError> {
    if cfg.batch_size == 0 {
        return Err(HarnessError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0f5_ca1e);
    let mut opt = Optimizer::new(cfg, model);
    let mut grads = model.zeros_like();
    let mut order = train_idx.to_vec();
    let mut batch_losses = Vec::new();
    let mut trace = Vec::new();
    let mut since_trace = (0.0, 0usize);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for (_, t) in grads.tensors_mut() {
                t.iter_mut().for_each(|x| *x = 0.0);
            }
            let mut loss = 0.0;
            for &i in batch {
                let s = corpus.sample(i);
                let input = model.input(&s.history, s.meta.target, s.meta.request_time);
                loss += model.accumulate_gradients(&input, s.meta.label, &mut grads)?.0;
            }
            loss /= batch.len() as f64;
            if !loss.is_finite() {
                return Err(HarnessError::Diverged {
                    step,
                    loss,
                    grad_norm: grads.sum_squares().sqrt(),
                });
            }
            grads.scale_all(1.0 / batch.len() as f32);
            opt.step(model, &mut grads);
            batch_losses.push(loss);
            since_trace.0 += loss;
            since_trace.1 += 1;
            step += 1;
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !val_idx.is_empty() {
                trace.push(trace_point(model, corpus, val_idx, step, epoch, &mut since_trace)?);
            }
        }
    }
    let final_eval = if val_idx.is_empty() {
        EvalReport {
            auc: f64::NAN,
            logloss: f64::NAN,
            n_samples: 0,
            per_kind: BTreeMap::new(),
        }
    } else {
        let e = evaluate(model, corpus, val_idx)?;
        if trace.last().map(|t: &TracePoint| t.step) != Some(step) {
            trace.push(TracePoint {
                step,
                epoch: cfg.epochs.saturating_sub(1),
                train_loss: if since_trace.1 > 0 { since_trace.0 / since_trace.1 as f64 } else { f64::NAN },
                val_auc: e.auc,
                val_logloss: e.logloss,
            });
        }
        e
    };
    Ok(TrainReport {
        steps: step,
        batch_losses,
        trace,
        final_eval,
    })
}
