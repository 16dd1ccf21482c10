//! Per-segment FFN with residual connection followed by layer norm.

use super::params::StaParams;
use super::AttentionError;
use crate::tensor::{
    ffn_forward_cached, layer_norm_cached, matmul_nt, matmul_tn, FfnCache, LayerNormCache, Matrix,
    Vector, LN_EPS,
};

#[derive(Debug, Clone)]
pub struct RefineCache {
    pub ffn: FfnCache,
    pub ln: LayerNormCache,
}

/// `LN(FFN(s) + s)` applied to every compressed row.
pub fn segment_refine(compressed: &Matrix, params: &StaParams) -> Result<Matrix, AttentionError> {
    segment_refine_cached(compressed, params).map(|(y, _)| y)
}

pub fn segment_refine_cached(
    compressed: &Matrix,
    p: &StaParams,
) -> Result<(Matrix, RefineCache), AttentionError> {
    let (ffn_out, ffn) = ffn_forward_cached(compressed, &p.ffn_w1, &p.ffn_b1, &p.ffn_w2, &p.ffn_b2)?;
    let residual = ffn_out.add(compressed)?;
    let (out, ln) = layer_norm_cached(&residual, &p.ln_gain, &p.ln_bias, LN_EPS)?;
    Ok((out, RefineCache { ffn, ln }))
}

#[derive(Debug, Clone)]
pub struct RefineGrads {
    pub ffn_w1: Matrix,
    pub ffn_b1: Vector,
    pub ffn_w2: Matrix,
    pub ffn_b2: Vector,
    pub ln_gain: Vector,
    pub ln_bias: Vector,
    pub input: Matrix,
}

fn column_sums(m: &Matrix) -> Vector {
    let mut out = vec![0.0f32; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    Vector::from_vec(out)
}

pub fn segment_refine_backward(
    compressed: &Matrix,
    p: &StaParams,
    cache: &RefineCache,
    grad_out: &Matrix,
) -> Result<RefineGrads, AttentionError> {
    let (rows, d) = grad_out.shape();
    let xhat = &cache.ln.normalized;
    let mut ln_gain = vec![0.0f32; d];
    let mut grad_res = Matrix::zeros(rows, d);
    for r in 0..rows {
        let g = grad_out.row(r);
        let xh = xhat.row(r);
        let gx: Vec<f32> = g.iter().zip(p.ln_gain.data()).map(|(a, b)| a * b).collect();
        let mean_g = gx.iter().sum::<f32>() / d as f32;
        let mean_gx = gx.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
        let is = cache.ln.inv_std[r];
        for (c, o) in grad_res.row_mut(r).iter_mut().enumerate() {
            *o = is * (gx[c] - mean_g - xh[c] * mean_gx);
            ln_gain[c] += g[c] * xh[c];
        }
    }
    let ln_bias = column_sums(grad_out);

    let ffn_b2 = column_sums(&grad_res);
    let ffn_w2 = matmul_tn(&cache.ffn.hidden, &grad_res)?;
    let mut grad_hidden = matmul_nt(&grad_res, &p.ffn_w2)?;
    for (g, &pre) in grad_hidden.data_mut().iter_mut().zip(cache.ffn.hidden_pre.data()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    let ffn_b1 = column_sums(&grad_hidden);
    let ffn_w1 = matmul_tn(compressed, &grad_hidden)?;
    let mut input = matmul_nt(&grad_hidden, &p.ffn_w1)?;
    input.add_assign(&grad_res)?;
    Ok(RefineGrads {
        ffn_w1,
        ffn_b1,
        ffn_w2,
        ffn_b2,
        ln_gain: Vector::from_vec(ln_gain),
        ln_bias,
        input,
    })
}
