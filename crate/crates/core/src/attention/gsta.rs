//! Stacked softmax target attention over the compressed sequence. Keys and
//! values come from the same fixed compressed matrix at every layer; only
//! the target stream is updated, through a residual add.

use super::params::GstaLayerParams;
use super::AttentionError;
use crate::tensor::{
    self, add_outer, flop_counter, matmul, matmul_nt, matmul_tn, matvec, softmax_in_place, vecmat,
    Matrix, Vector,
};

#[derive(Debug, Clone)]
pub struct GstaOutput {
    pub z: Vector,
    /// Attention weights over segments, one vector per layer.
    pub attn_maps: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct GstaLayerCache {
    pub t_in: Vec<f32>,
    pub query: Vec<f32>,
    pub keys: Matrix,
    pub values: Matrix,
}

pub fn gsta_forward(
    target: &Vector,
    compressed: &Matrix,
    layers: &[GstaLayerParams],
    seg_mask: &[bool],
) -> Result<GstaOutput, AttentionError> {
    gsta_forward_cached(target, compressed, layers, seg_mask).map(|(o, _)| o)
}

pub fn gsta_forward_cached(
    target: &Vector,
    compressed: &Matrix,
    layers: &[GstaLayerParams],
    seg_mask: &[bool],
) -> Result<(GstaOutput, Vec<GstaLayerCache>), AttentionError> {
    if layers.is_empty() {
        return Err(AttentionError::Config("at least one GSTA layer is required".into()));
    }
    if seg_mask.len() != compressed.rows() {
        return Err(AttentionError::Shape(format!(
            "segment mask {} vs {} segments",
            seg_mask.len(),
            compressed.rows()
        )));
    }
    if !seg_mask.iter().any(|&m| m) {
        return Err(AttentionError::AllSegmentsMasked);
    }
    let d = target.dim();
    let scale = 1.0 / (d as f32).sqrt();
    let mut t = target.data().to_vec();
    let mut maps = Vec::with_capacity(layers.len());
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let query = vecmat(&t, &layer.w_q)?;
        let keys = matmul(compressed, &layer.w_k)?;
        let values = matmul(compressed, &layer.w_v)?;
        let mut a = matvec(&keys, &query)?;
        a.iter_mut().for_each(|x| *x *= scale);
        softmax_in_place(&mut a, Some(seg_mask));
        let o = vecmat(&a, &values)?;
        let t_in = t.clone();
        for (ti, oi) in t.iter_mut().zip(&o) {
            *ti += oi;
        }
        flop_counter::add((compressed.rows() + d) as u64);
        maps.push(a);
        caches.push(GstaLayerCache {
            t_in,
            query,
            keys,
            values,
        });
    }
    Ok((
        GstaOutput {
            z: Vector::from_vec(t),
            attn_maps: maps,
        },
        caches,
    ))
}

#[derive(Debug, Clone)]
pub struct GstaGrads {
    pub layers: Vec<GstaLayerParams>,
    pub compressed: Matrix,
    pub target: Vec<f32>,
}

pub fn gsta_backward(
    compressed: &Matrix,
    layers: &[GstaLayerParams],
    out: &GstaOutput,
    caches: &[GstaLayerCache],
    grad_z: &[f32],
) -> Result<GstaGrads, AttentionError> {
    let d = grad_z.len();
    let scale = 1.0 / (d as f32).sqrt();
    let mut grad_t = grad_z.to_vec();
    let mut grad_compressed = Matrix::zeros(compressed.rows(), compressed.cols());
    let mut grads: Vec<GstaLayerParams> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let (layer, cache, a) = (&layers[l], &caches[l], &out.attn_maps[l]);
        // o = a · V
        let mut grad_values = Matrix::zeros(compressed.rows(), d);
        add_outer(&mut grad_values, a, &grad_t);
        let grad_a = matvec(&cache.values, &grad_t)?;
        let inner: f32 = a.iter().zip(&grad_a).map(|(x, y)| x * y).sum();
        let grad_e: Vec<f32> = a
            .iter()
            .zip(&grad_a)
            .map(|(ai, gi)| ai * (gi - inner) * scale)
            .collect();
        let grad_query = vecmat(&grad_e, &cache.keys)?;
        let mut grad_keys = Matrix::zeros(compressed.rows(), d);
        add_outer(&mut grad_keys, &grad_e, &cache.query);

        let mut w_q = Matrix::zeros(d, d);
        add_outer(&mut w_q, &cache.t_in, &grad_query);
        let w_k = matmul_tn(compressed, &grad_keys)?;
        let w_v = matmul_tn(compressed, &grad_values)?;
        grad_compressed.add_assign(&matmul_nt(&grad_keys, &layer.w_k)?)?;
        grad_compressed.add_assign(&matmul_nt(&grad_values, &layer.w_v)?)?;
        let through_query = matvec(&layer.w_q, &grad_query)?;
        tensor::axpy(&mut grad_t, 1.0, &through_query);
        grads.push(GstaLayerParams { w_q, w_k, w_v });
    }
    grads.reverse();
    Ok(GstaGrads {
        layers: grads,
        compressed: grad_compressed,
        target: grad_t,
    })
}
