//! The full encoder: recency → pad → STA → refine → GSTA → fusion, and its
//! hand-written backward pass.

use super::config::LaserConfig;
use super::fusion::{fuse_with_argmax, FusionOutput};
use super::gsta::{gsta_backward, gsta_forward_cached, GstaLayerCache, GstaOutput};
use super::params::LaserParams;
use super::refine::{segment_refine_backward, segment_refine_cached, RefineCache};
use super::sta::{
    apply_recency, sta_backward, sta_vectorized_cached, SequenceBatchInput, StaCache, StaOutput,
};
use super::AttentionError;
use crate::tensor::{self, Matrix, Vector};

/// Intermediates of one forward pass. Owned by the caller, never shared.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input_rows: usize,
    valid_len: usize,
    target: Vector,
    history: Matrix,
    mask: Vec<bool>,
    buckets: Vec<usize>,
    sta: StaOutput,
    sta_cache: StaCache,
    refine: RefineCache,
    data_segments: Vec<bool>,
    compressed: Matrix,
    gsta: GstaOutput,
    gsta_cache: Vec<GstaLayerCache>,
    argmax: Vec<usize>,
    /// Count of events newer than the request time seen by recency.
    pub clamped_timestamps: usize,
}

pub fn laser_forward(
    input: &SequenceBatchInput,
    params: &LaserParams,
    cfg: &LaserConfig,
) -> Result<FusionOutput, AttentionError> {
    laser_forward_cached(input, params, cfg).map(|(o, _)| o)
}

pub fn laser_forward_cached(
    input: &SequenceBatchInput,
    params: &LaserParams,
    cfg: &LaserConfig,
) -> Result<(FusionOutput, ForwardCache), AttentionError> {
    input.validate(cfg)?;
    if params.gsta.len() != cfg.gsta_layers {
        return Err(AttentionError::Shape(format!(
            "{} GSTA layers for gsta_layers = {}",
            params.gsta.len(),
            cfg.gsta_layers
        )));
    }
    let w = cfg.segment_w;
    let (tokens, buckets, clamped) = if cfg.use_recency {
        let r = apply_recency(input, &params.recency);
        (r.tokens, r.buckets, r.clamped)
    } else {
        (input.tokens.clone(), Vec::new(), 0)
    };
    let segments = cfg.segments_for(input.tokens.rows());
    let history = tokens.pad_rows(segments * w);
    let mask = input.position_mask(segments * w);

    let (sta, sta_cache) = sta_vectorized_cached(&input.target, &history, &params.sta, cfg, &mask)?;
    let (mut compressed, refine) = segment_refine_cached(&sta.compressed, &params.sta)?;

    let data_segments: Vec<bool> = (0..segments).map(|i| mask[i * w]).collect();
    for (i, &ok) in data_segments.iter().enumerate() {
        if !ok {
            compressed.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
        }
    }
    // an empty history keeps one zero segment so global attention is defined
    let mut seg_mask = data_segments.clone();
    if !seg_mask.iter().any(|&m| m) {
        seg_mask[0] = true;
    }

    let (gsta, gsta_cache) = gsta_forward_cached(&input.target, &compressed, &params.gsta, &seg_mask)?;
    let (mut out, argmax) = fuse_with_argmax(&gsta.z, &compressed, cfg.recent_k, &seg_mask)?;
    if !cfg.use_fusion {
        out.fused = gsta.z.clone();
    }
    out.sta_scores = Vector::from_vec(sta.scores.data().to_vec());
    let cache = ForwardCache {
        input_rows: input.tokens.rows(),
        valid_len: input.valid_len,
        target: input.target.clone(),
        history,
        mask,
        buckets,
        sta,
        sta_cache,
        refine,
        data_segments,
        compressed,
        gsta,
        gsta_cache,
        argmax,
        clamped_timestamps: clamped,
    };
    Ok((out, cache))
}

/// Gradients of a scalar loss with respect to every parameter and input.
#[derive(Debug, Clone)]
pub struct LaserGradients {
    pub params: LaserParams,
    pub tokens: Matrix,
    pub target: Vector,
}

pub fn laser_backward(
    cache: &ForwardCache,
    params: &LaserParams,
    cfg: &LaserConfig,
    upstream: &[f32],
) -> Result<LaserGradients, AttentionError> {
    let d = cfg.embed_dim;
    if upstream.len() != cfg.fused_dim() {
        return Err(AttentionError::Shape(format!(
            "upstream gradient has {} entries, fused output has {}",
            upstream.len(),
            cfg.fused_dim()
        )));
    }
    let segments = cache.compressed.rows();
    let mut grad_compressed = Matrix::zeros(segments, d);
    if cfg.use_fusion {
        let grad_pool = &upstream[d..2 * d];
        for (c, (&row, &g)) in cache.argmax.iter().zip(grad_pool).enumerate() {
            let v = grad_compressed.get(row, c);
            grad_compressed.set(row, c, v + g);
        }
        for r in 0..cfg.recent_k {
            tensor::axpy(
                grad_compressed.row_mut(r),
                1.0,
                &upstream[(2 + r) * d..(3 + r) * d],
            );
        }
    }

    let g = gsta_backward(
        &cache.compressed,
        &params.gsta,
        &cache.gsta,
        &cache.gsta_cache,
        &upstream[..d],
    )?;
    grad_compressed.add_assign(&g.compressed)?;
    let mut grad_target = g.target;
    for (i, &ok) in cache.data_segments.iter().enumerate() {
        if !ok {
            grad_compressed.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    let r = segment_refine_backward(&cache.sta.compressed, &params.sta, &cache.refine, &grad_compressed)?;
    let s = sta_backward(
        &cache.target,
        &cache.history,
        &params.sta,
        cfg,
        &cache.mask,
        &cache.sta,
        &cache.sta_cache,
        &r.input,
    )?;
    tensor::axpy(&mut grad_target, 1.0, &s.target);

    let mut grads = LaserParams::zeros(cfg);
    grads.sta.w_q = s.w_q;
    grads.sta.w_k = s.w_k;
    grads.sta.w_v = s.w_v;
    grads.sta.ffn_w1 = r.ffn_w1;
    grads.sta.ffn_b1 = r.ffn_b1;
    grads.sta.ffn_w2 = r.ffn_w2;
    grads.sta.ffn_b2 = r.ffn_b2;
    grads.sta.ln_gain = r.ln_gain;
    grads.sta.ln_bias = r.ln_bias;
    grads.gsta = g.layers;
    grads.recency.bucket_edges = params.recency.bucket_edges.clone();
    if cfg.use_recency {
        for (i, &b) in cache.buckets.iter().enumerate().take(cache.valid_len) {
            tensor::axpy(grads.recency.table.row_mut(b), 1.0, s.history.row(i));
        }
    }
    let tokens = s.history.slice_rows(0, cache.input_rows);
    Ok(LaserGradients {
        params: grads,
        tokens,
        target: Vector::from_vec(grad_target),
    })
}

/// Forward/backward pair that keeps the last forward's cache.
#[derive(Debug)]
pub struct LaserSession<'a> {
    cfg: &'a LaserConfig,
    params: &'a LaserParams,
    cache: Option<ForwardCache>,
}

impl<'a> LaserSession<'a> {
    pub fn new(cfg: &'a LaserConfig, params: &'a LaserParams) -> Self {
        Self {
            cfg,
            params,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &SequenceBatchInput) -> Result<FusionOutput, AttentionError> {
        let (out, cache) = laser_forward_cached(input, self.params, self.cfg)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Consumes the cache of the preceding [`LaserSession::forward`].
    pub fn backward(&mut self, upstream: &[f32]) -> Result<LaserGradients, AttentionError> {
        let cache = self.cache.take().ok_or(AttentionError::NoForwardCache)?;
        laser_backward(&cache, self.params, self.cfg, upstream)
    }
}
