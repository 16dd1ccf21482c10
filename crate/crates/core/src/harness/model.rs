//! CTR model: item and category embeddings, a swappable sequence encoder and
//! an MLP head over `[encoding ‖ target]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoders::{self, DinCache, SelfAttnCache, SelfAttnWeights};
use super::metrics::{bce_with_logit, sigmoid, PRED_CLAMP};
use super::synth::{HistoryEvent, TargetItem};
use super::HarnessError;
use crate::attention::params::xavier;
use crate::attention::{
    laser_backward, laser_forward_cached, Checkpoint, ForwardCache, LaserConfig, LaserParams, NamedTensor,
    Parameters, SequenceBatchInput, TensorView,
};
use crate::tensor::{self, matvec, vecmat, Matrix, Vector};

pub const EMBED_INIT: f32 = 0.05;
const META: &str = "ctr.meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Laser,
    MeanPool,
    #[serde(rename = "din_target_attention")]
    Din,
    #[serde(rename = "tiny_self_attention")]
    SelfAttention,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::Laser,
        EncoderKind::MeanPool,
        EncoderKind::Din,
        EncoderKind::SelfAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Laser => "laser",
            EncoderKind::MeanPool => "mean_pool",
            EncoderKind::Din => "din_target_attention",
            EncoderKind::SelfAttention => "tiny_self_attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

/// `laser` also fixes `seq_len` (history truncation) and `embed_dim` for the
/// baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrConfig {
    pub encoder: EncoderKind,
    pub laser: LaserConfig,
    pub n_items: usize,
    pub n_topics: usize,
    pub hidden: usize,
}

impl Default for CtrConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Laser,
            laser: LaserConfig::default(),
            n_items: 10_000,
            n_topics: 100,
            hidden: 64,
        }
    }
}

impl CtrConfig {
    pub fn embed_dim(&self) -> usize {
        self.laser.embed_dim
    }

    pub fn encoding_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Laser => self.laser.fused_dim(),
            _ => self.laser.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.laser.validate()?;
        let limit = 1 << 24;
        if self.n_items == 0 || self.n_topics == 0 || self.hidden == 0 {
            return Err(HarnessError::Config("n_items, n_topics and hidden must be positive".into()));
        }
        if self.n_items >= limit || self.n_topics >= limit || self.hidden >= limit {
            return Err(HarnessError::Config("table sizes must stay below 2^24".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    Laser(LaserParams),
    MeanPool,
    Din { w: Matrix },
    SelfAttention { w_q: Matrix, w_k: Matrix, w_v: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrModel {
    pub config: CtrConfig,
    pub item_emb: Matrix,
    pub cat_emb: Matrix,
    pub encoder: EncoderParams,
    pub head: Head,
}

/// Embedding-row ids and timing of one request, truncated to `seq_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub items: Vec<usize>,
    pub cats: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub request_time: i64,
    pub target_item: usize,
    pub target_cat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub prob: f64,
    /// Sequence encoding fed to the head.
    pub encoding: Vec<f32>,
}

impl Prediction {
    /// FNV-1a over the bit patterns of the encoding and the probability.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let bytes = self
            .encoding
            .iter()
            .flat_map(|x| x.to_bits().to_le_bytes())
            .chain(self.prob.to_bits().to_le_bytes());
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

enum EncCache {
    Laser(Box<ForwardCache>),
    MeanPool,
    Din(DinCache),
    SelfAttention(SelfAttnCache),
}

struct Forward {
    tokens: Matrix,
    target: Vec<f32>,
    cache: EncCache,
    head_in: Vec<f32>,
    hidden_pre: Vec<f32>,
    pred: Prediction,
}

impl CtrModel {
    pub fn new(config: CtrConfig, seed: u64) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim();
        let mut emb = |rows: usize| Matrix::from_fn(rows, d, |_, _| rng.gen_range(-EMBED_INIT..EMBED_INIT));
        let item_emb = emb(config.n_items);
        let cat_emb = emb(config.n_topics);
        let encoder = match config.encoder {
            EncoderKind::Laser => {
                let mut p = LaserParams::init(&config.laser, &mut rng);
                // scores start as token similarity
                p.sta.w_k = p.sta.w_q.clone();
                for layer in &mut p.gsta {
                    layer.w_k = layer.w_q.clone();
                }
                EncoderParams::Laser(p)
            }
            EncoderKind::MeanPool => EncoderParams::MeanPool,
            // starts as plain dot-product attention
            EncoderKind::Din => EncoderParams::Din { w: Matrix::identity(d) },
            EncoderKind::SelfAttention => EncoderParams::SelfAttention {
                w_q: xavier(&mut rng, d, d),
                w_k: xavier(&mut rng, d, d),
                w_v: xavier(&mut rng, d, d),
            },
        };
        let input = config.encoding_dim() + d;
        let head = Head {
            w1: xavier(&mut rng, input, config.hidden),
            b1: Vector::zeros(config.hidden),
            w2: xavier(&mut rng, config.hidden, 1),
            b2: Vector::zeros(1),
        };
        Ok(Self {
            config,
            item_emb,
            cat_emb,
            encoder,
            head,
        })
    }

    /// Same shapes, every learnable entry zero. Used for gradients and
    /// optimizer state.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn input(&self, history: &[HistoryEvent], target: TargetItem, request_time: i64) -> ModelInput {
        let n = history.len().min(self.config.laser.seq_len);
        let h = &history[..n];
        ModelInput {
            items: h.iter().map(|e| self.item_row(e.item)).collect(),
            cats: h.iter().map(|e| self.cat_row(e.category)).collect(),
            timestamps: h.iter().map(|e| e.ts).collect(),
            request_time,
            target_item: self.item_row(target.item),
            target_cat: self.cat_row(target.category),
        }
    }

    fn item_row(&self, item: u64) -> usize {
        (item % self.config.n_items as u64) as usize
    }

    fn cat_row(&self, cat: u32) -> usize {
        cat as usize % self.config.n_topics
    }

    fn token(&self, item: usize, cat: usize) -> impl Iterator<Item = f32> + '_ {
        let s = self.token_scale();
        self.item_emb.row(item).iter().zip(self.cat_emb.row(cat)).map(move |(a, b)| s * (a + b))
    }

    /// Tokens are `√d · (item + category)`.
    fn token_scale(&self) -> f32 {
        (self.config.embed_dim() as f32).sqrt()
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Prediction, HarnessError> {
        Ok(self.forward(input)?.pred)
    }

    fn forward(&self, input: &ModelInput) -> Result<Forward, HarnessError> {
        let d = self.config.embed_dim();
        let n = input.items.len();
        let mut data = Vec::with_capacity(n * d);
        for (&i, &c) in input.items.iter().zip(&input.cats) {
            data.extend(self.token(i, c));
        }
        let tokens = Matrix::from_vec(n, d, data);
        let target: Vec<f32> = self.token(input.target_item, input.target_cat).collect();

        let (encoding, cache) = match &self.encoder {
            EncoderParams::Laser(p) => {
                let seq = SequenceBatchInput {
                    tokens: tokens.clone(),
                    timestamps: input.timestamps.clone(),
                    request_time: input.request_time,
                    valid_len: n,
                    target: Vector::from_vec(target.clone()),
                };
                let (out, cache) = laser_forward_cached(&seq, p, &self.config.laser)?;
                (out.fused.into_vec(), EncCache::Laser(Box::new(cache)))
            }
            EncoderParams::MeanPool => (encoders::mean_pool(&tokens), EncCache::MeanPool),
            EncoderParams::Din { w } => {
                let (o, c) = encoders::din_forward(&tokens, &target, w)?;
                (o, EncCache::Din(c))
            }
            EncoderParams::SelfAttention { w_q, w_k, w_v } => {
                let p = SelfAttnWeights { w_q, w_k, w_v };
                let (o, c) = encoders::self_attention_forward(&tokens, &p)?;
                (o, EncCache::SelfAttention(c))
            }
        };

        let mut head_in = encoding.clone();
        head_in.extend_from_slice(&target);
        let mut hidden_pre = vecmat(&head_in, &self.head.w1)?;
        tensor::axpy(&mut hidden_pre, 1.0, self.head.b1.data());
        let hidden: Vec<f32> = hidden_pre.iter().map(|&x| x.max(0.0)).collect();
        let logit = vecmat(&hidden, &self.head.w2)?[0] + self.head.b2.data()[0];
        let logit = logit as f64;
        if !logit.is_finite() {
            return Err(HarnessError::NonFinite("logit".into()));
        }
        Ok(Forward {
            tokens,
            target,
            cache,
            head_in,
            hidden_pre,
            pred: Prediction {
                logit,
                prob: sigmoid(logit).clamp(PRED_CLAMP, 1.0 - PRED_CLAMP),
                encoding,
            },
        })
    }

    /// Adds the gradient of the BCE loss for one sample into `grads` (shaped
    /// like `self`) and returns the loss and prediction.
    pub fn accumulate_gradients(
        &self,
        input: &ModelInput,
        label: bool,
        grads: &mut CtrModel,
    ) -> Result<(f64, Prediction), HarnessError> {
        let fwd = self.forward(input)?;
        let (loss, dlogit) = bce_with_logit(fwd.pred.logit, if label { 1.0 } else { 0.0 });
        let dlogit = dlogit as f32;
        let d = self.config.embed_dim();
        let enc_dim = self.config.encoding_dim();

        let hidden: Vec<f32> = fwd.hidden_pre.iter().map(|&x| x.max(0.0)).collect();
        tensor::axpy(grads.head.w2.data_mut(), dlogit, &hidden);
        grads.head.b2.data_mut()[0] += dlogit;
        let dh: Vec<f32> = self
            .head
            .w2
            .data()
            .iter()
            .zip(&fwd.hidden_pre)
            .map(|(&w, &pre)| if pre > 0.0 { w * dlogit } else { 0.0 })
            .collect();
        tensor::add_outer(&mut grads.head.w1, &fwd.head_in, &dh);
        tensor::axpy(grads.head.b1.data_mut(), 1.0, &dh);
        let dx = matvec(&self.head.w1, &dh)?;
        let (denc, dt) = dx.split_at(enc_dim);
        let mut dtarget = dt.to_vec();

        let dtokens = match (&self.encoder, fwd.cache, &mut grads.encoder) {
            (EncoderParams::Laser(p), EncCache::Laser(cache), EncoderParams::Laser(g)) => {
                let lg = laser_backward(&cache, p, &self.config.laser, denc)?;
                accumulate(g, &lg.params);
                tensor::axpy(&mut dtarget, 1.0, lg.target.data());
                lg.tokens
            }
            (EncoderParams::MeanPool, EncCache::MeanPool, EncoderParams::MeanPool) => {
                encoders::mean_pool_backward(fwd.tokens.rows(), denc)
            }
            (EncoderParams::Din { w }, EncCache::Din(cache), EncoderParams::Din { w: gw }) => {
                let g = encoders::din_backward(&fwd.tokens, &fwd.target, w, &cache, denc)?;
                gw.add_assign(&g.w)?;
                tensor::axpy(&mut dtarget, 1.0, &g.target);
                g.tokens
            }
            (
                EncoderParams::SelfAttention { w_q, w_k, w_v },
                EncCache::SelfAttention(cache),
                EncoderParams::SelfAttention {
                    w_q: gq,
                    w_k: gk,
                    w_v: gv,
                },
            ) => {
                let p = SelfAttnWeights { w_q, w_k, w_v };
                let g = encoders::self_attention_backward(&fwd.tokens, &p, &cache, denc)?;
                gq.add_assign(&g.w_q)?;
                gk.add_assign(&g.w_k)?;
                gv.add_assign(&g.w_v)?;
                g.tokens
            }
            _ => return Err(HarnessError::Config("gradient buffer does not match the model".into())),
        };

        let ts = self.token_scale();
        let mut dtokens = dtokens;
        dtokens.data_mut().iter_mut().for_each(|x| *x *= ts);
        dtarget.iter_mut().for_each(|x| *x *= ts);
        for (j, (&i, &c)) in input.items.iter().zip(&input.cats).enumerate() {
            let row = dtokens.row(j);
            tensor::axpy(grads.item_emb.row_mut(i), 1.0, row);
            tensor::axpy(grads.cat_emb.row_mut(c), 1.0, row);
        }
        debug_assert_eq!(dtarget.len(), d);
        tensor::axpy(grads.item_emb.row_mut(input.target_item), 1.0, &dtarget);
        tensor::axpy(grads.cat_emb.row_mut(input.target_cat), 1.0, &dtarget);
        Ok((loss, fwd.pred))
    }

    /// LASR container: the encoder config, a `ctr.meta` tensor
    /// `[encoder code, n_items, n_topics, hidden]`, then every tensor by name.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut tensors = vec![NamedTensor {
            name: META.into(),
            dims: vec![4],
            data: vec![c.encoder.code() as f32, c.n_items as f32, c.n_topics as f32, c.hidden as f32],
        }];
        tensors.extend(self.tensors().into_iter().map(|(n, v)| NamedTensor::from_view(n, v)));
        if let EncoderParams::Laser(p) = &self.encoder {
            let edges = p.to_named_tensors().pop().expect("edges tensor");
            tensors.push(edges);
        }
        Checkpoint {
            config: c.laser.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, HarnessError> {
        let meta = ckpt.get(META)?;
        let [code, n_items, n_topics, hidden] = meta.data[..] else {
            return Err(HarnessError::Checkpoint(format!("{META} has {} entries", meta.data.len())));
        };
        let encoder = EncoderKind::from_code(code as u32)
            .ok_or_else(|| HarnessError::Checkpoint(format!("unknown encoder code {code}")))?;
        let config = CtrConfig {
            encoder,
            laser: ckpt.config.clone(),
            n_items: n_items as usize,
            n_topics: n_topics as usize,
            hidden: hidden as usize,
        };
        let mut model = CtrModel::new(config, 0)?;
        if let EncoderParams::Laser(p) = &mut model.encoder {
            *p = LaserParams::from_checkpoint(ckpt)?;
        }
        for (name, dst) in model.tensors_mut() {
            let t = ckpt.get(&name)?;
            if t.data.len() != dst.len() {
                return Err(HarnessError::Checkpoint(format!(
                    "{name}: {} values, config implies {}",
                    t.data.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(model)
    }
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: Parameters>(dst: &mut P, src: &P) {
    for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        tensor::axpy(d, 1.0, s.data());
    }
}

impl Parameters for CtrModel {
    fn tensors(&self) -> Vec<(String, TensorView<'_>)> {
        use TensorView::{Matrix as M, Vector as V};
        let mut out = vec![
            ("ctr.item_emb".to_string(), M(&self.item_emb)),
            ("ctr.cat_emb".to_string(), M(&self.cat_emb)),
        ];
        match &self.encoder {
            EncoderParams::Laser(p) => out.extend(p.tensors()),
            EncoderParams::MeanPool => {}
            EncoderParams::Din { w } => out.push(("din.w".into(), M(w))),
            EncoderParams::SelfAttention { w_q, w_k, w_v } => {
                out.push(("sa.w_q".into(), M(w_q)));
                out.push(("sa.w_k".into(), M(w_k)));
                out.push(("sa.w_v".into(), M(w_v)));
            }
        }
        let h = &self.head;
        out.push(("head.w1".into(), M(&h.w1)));
        out.push(("head.b1".into(), V(&h.b1)));
        out.push(("head.w2".into(), M(&h.w2)));
        out.push(("head.b2".into(), V(&h.b2)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out: Vec<(String, &mut [f32])> = vec![
            ("ctr.item_emb".to_string(), self.item_emb.data_mut()),
            ("ctr.cat_emb".to_string(), self.cat_emb.data_mut()),
        ];
        match &mut self.encoder {
            EncoderParams::Laser(p) => out.extend(p.tensors_mut()),
            EncoderParams::MeanPool => {}
            EncoderParams::Din { w } => out.push(("din.w".into(), w.data_mut())),
            EncoderParams::SelfAttention { w_q, w_k, w_v } => {
                out.push(("sa.w_q".into(), w_q.data_mut()));
                out.push(("sa.w_k".into(), w_k.data_mut()));
                out.push(("sa.w_v".into(), w_v.data_mut()));
            }
        }
        let h = &mut self.head;
        out.push(("head.w1".into(), h.w1.data_mut()));
        out.push(("head.b1".into(), h.b1.data_mut()));
        out.push(("head.w2".into(), h.w2.data_mut()));
        out.push(("head.b2".into(), h.b2.data_mut()));
        out
    }
}
