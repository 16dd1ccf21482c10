use rand::Rng;

use super::config::LaserConfig;
use crate::tensor::{Matrix, Vector};

/// Borrowed view of one named tensor, used by optimizers and checkpoints.
#[derive(Debug, Clone, Copy)]
pub enum TensorView<'a> {
    Matrix(&'a Matrix),
    Vector(&'a Vector),
}

impl<'a> TensorView<'a> {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            TensorView::Matrix(m) => vec![m.rows(), m.cols()],
            TensorView::Vector(v) => vec![v.dim()],
        }
    }

    pub fn data(&self) -> &'a [f32] {
        match self {
            TensorView::Matrix(m) => m.data(),
            TensorView::Vector(v) => v.data(),
        }
    }
}

/// A collection of named learnable tensors with a fixed enumeration order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, TensorView<'_>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f32])>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|&x| x as f64 * x as f64)
            .sum()
    }

    fn scale_all(&mut self, s: f32) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-a..a))
}

/// Segment-level projections plus the per-segment FFN and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StaParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Vector,
    pub ffn_w2: Matrix,
    pub ffn_b2: Vector,
    pub ln_gain: Vector,
    pub ln_bias: Vector,
}

impl StaParams {
    pub fn init(cfg: &LaserConfig, rng: &mut impl Rng) -> Self {
        let (d, dq, f) = (cfg.embed_dim, cfg.qk_dim, cfg.ffn_dim());
        Self {
            w_q: xavier(rng, d, dq),
            w_k: xavier(rng, d, dq),
            w_v: xavier(rng, d, d),
            ffn_w1: xavier(rng, d, f),
            ffn_b1: Vector::zeros(f),
            ffn_w2: xavier(rng, f, d),
            ffn_b2: Vector::zeros(d),
            ln_gain: Vector::filled(d, 1.0),
            ln_bias: Vector::zeros(d),
        }
    }

    pub fn zeros(cfg: &LaserConfig) -> Self {
        let (d, dq, f) = (cfg.embed_dim, cfg.qk_dim, cfg.ffn_dim());
        Self {
            w_q: Matrix::zeros(d, dq),
            w_k: Matrix::zeros(d, dq),
            w_v: Matrix::zeros(d, d),
            ffn_w1: Matrix::zeros(d, f),
            ffn_b1: Vector::zeros(f),
            ffn_w2: Matrix::zeros(f, d),
            ffn_b2: Vector::zeros(d),
            ln_gain: Vector::zeros(d),
            ln_bias: Vector::zeros(d),
        }
    }
}

/// One global target-attention layer; all projections are `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GstaLayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl GstaLayerParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_q: xavier(rng, d, d),
            w_k: xavier(rng, d, d),
            w_v: xavier(rng, d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
        }
    }
}

const YEAR_SECS: f64 = 365.0 * 24.0 * 3600.0;

/// Learnable embedding of the age of each event, bucketed on a log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RecencyTable {
    pub table: Matrix,
    /// Strictly increasing lower bounds (seconds) of buckets `1..`.
    pub bucket_edges: Vec<f32>,
}

impl RecencyTable {
    /// `buckets` rows of zeros with edges spaced geometrically from one
    /// second to one year.
    pub fn new(buckets: usize, d: usize) -> Self {
        Self {
            table: Matrix::zeros(buckets, d),
            bucket_edges: log_edges(buckets),
        }
    }

    pub fn with_edges(table: Matrix, bucket_edges: Vec<f32>) -> Self {
        assert_eq!(table.rows(), bucket_edges.len() + 1, "one more bucket than edges");
        assert!(
            bucket_edges.windows(2).all(|w| w[0] < w[1]),
            "bucket edges must be strictly increasing"
        );
        Self { table, bucket_edges }
    }

    /// Bucket of a nonnegative age. An age equal to an edge falls into the
    /// bucket above it; anything past the last edge lands in the last bucket.
    pub fn bucket(&self, delta_secs: f64) -> usize {
        let idx = self
            .bucket_edges
            .partition_point(|&e| (e as f64) <= delta_secs);
        idx.min(self.table.rows() - 1)
    }
}

fn log_edges(buckets: usize) -> Vec<f32> {
    match buckets {
        0 | 1 => Vec::new(),
        2 => vec![1.0],
        _ => {
            let n = buckets - 1;
            let top = YEAR_SECS.log2();
            (0..n)
                .map(|k| (top * k as f64 / (n - 1) as f64).exp2() as f32)
                .collect()
        }
    }
}

/// Every learnable tensor of the LASER encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserParams {
    pub sta: StaParams,
    pub gsta: Vec<GstaLayerParams>,
    pub recency: RecencyTable,
}

impl LaserParams {
    pub fn init(cfg: &LaserConfig, rng: &mut impl Rng) -> Self {
        let sta = StaParams::init(cfg, rng);
        let gsta = (0..cfg.gsta_layers)
            .map(|_| GstaLayerParams::init(cfg.embed_dim, rng))
            .collect();
        Self {
            sta,
            gsta,
            recency: RecencyTable::new(cfg.recency_buckets, cfg.embed_dim),
        }
    }

    /// Same shapes as [`LaserParams::init`], every entry zero. Used as a
    /// gradient accumulator.
    pub fn zeros(cfg: &LaserConfig) -> Self {
        Self {
            sta: StaParams::zeros(cfg),
            gsta: (0..cfg.gsta_layers)
                .map(|_| GstaLayerParams::zeros(cfg.embed_dim))
                .collect(),
            recency: RecencyTable::new(cfg.recency_buckets, cfg.embed_dim),
        }
    }
}

impl Parameters for LaserParams {
    fn tensors(&self) -> Vec<(String, TensorView<'_>)> {
        use TensorView::{Matrix as M, Vector as V};
        let s = &self.sta;
        let mut out = vec![
            ("sta.w_q".to_string(), M(&s.w_q)),
            ("sta.w_k".to_string(), M(&s.w_k)),
            ("sta.w_v".to_string(), M(&s.w_v)),
            ("sta.ffn_w1".to_string(), M(&s.ffn_w1)),
            ("sta.ffn_b1".to_string(), V(&s.ffn_b1)),
            ("sta.ffn_w2".to_string(), M(&s.ffn_w2)),
            ("sta.ffn_b2".to_string(), V(&s.ffn_b2)),
            ("sta.ln_gain".to_string(), V(&s.ln_gain)),
            ("sta.ln_bias".to_string(), V(&s.ln_bias)),
        ];
        for (l, g) in self.gsta.iter().enumerate() {
            out.push((format!("gsta.{l}.w_q"), M(&g.w_q)));
            out.push((format!("gsta.{l}.w_k"), M(&g.w_k)));
            out.push((format!("gsta.{l}.w_v"), M(&g.w_v)));
        }
        out.push(("recency.table".to_string(), M(&self.recency.table)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let s = &mut self.sta;
        let mut out = vec![
            ("sta.w_q".to_string(), s.w_q.data_mut()),
            ("sta.w_k".to_string(), s.w_k.data_mut()),
            ("sta.w_v".to_string(), s.w_v.data_mut()),
            ("sta.ffn_w1".to_string(), s.ffn_w1.data_mut()),
            ("sta.ffn_b1".to_string(), s.ffn_b1.data_mut()),
            ("sta.ffn_w2".to_string(), s.ffn_w2.data_mut()),
            ("sta.ffn_b2".to_string(), s.ffn_b2.data_mut()),
            ("sta.ln_gain".to_string(), s.ln_gain.data_mut()),
            ("sta.ln_bias".to_string(), s.ln_bias.data_mut()),
        ];
        for (l, g) in self.gsta.iter_mut().enumerate() {
            out.push((format!("gsta.{l}.w_q"), g.w_q.data_mut()));
            out.push((format!("gsta.{l}.w_k"), g.w_k.data_mut()));
            out.push((format!("gsta.{l}.w_v"), g.w_v.data_mut()));
        }
        out.push(("recency.table".to_string(), self.recency.table.data_mut()));
        out
    }
}
