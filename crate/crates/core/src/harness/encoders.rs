//! Baseline sequence encoders: mean pooling, DIN-style target attention and
//! a one-layer self-attention block. Each maps `n × d` history tokens (valid
//! rows only) and a target to a `d`-vector and has a matching backward.

use crate::tensor::{self, flop_counter, matmul, matmul_nt, matmul_tn, matvec, softmax_rows, vecmat, Matrix};

pub fn mean_pool(tokens: &Matrix) -> Vec<f32> {
    let (n, d) = tokens.shape();
    let mut out = vec![0.0f32; d];
    if n == 0 {
        return out;
    }
    for r in 0..n {
        tensor::axpy(&mut out, 1.0, tokens.row(r));
    }
    let inv = 1.0 / n as f32;
    out.iter_mut().for_each(|x| *x *= inv);
    flop_counter::add((n * d + d) as u64);
    out
}

pub fn mean_pool_backward(rows: usize, grad: &[f32]) -> Matrix {
    if rows == 0 {
        return Matrix::zeros(0, grad.len());
    }
    let g: Vec<f32> = grad.iter().map(|x| x / rows as f32).collect();
    Matrix::from_fn(rows, grad.len(), |_, c| g[c])
}

#[derive(Debug, Clone)]
pub struct DinCache {
    u: Vec<f32>,
    weights: Vec<f32>,
}

/// `a = softmax(H (W t) / √d)`, output `aᵀ H`.
pub fn din_forward(tokens: &Matrix, target: &[f32], w: &Matrix) -> tensor::Result<(Vec<f32>, DinCache)> {
    let (n, d) = tokens.shape();
    let u = vecmat(target, w)?;
    if n == 0 {
        return Ok((vec![0.0; d], DinCache { u, weights: Vec::new() }));
    }
    let scale = 1.0 / (d as f32).sqrt();
    let mut scores = Matrix::from_vec(1, n, matvec(tokens, &u)?.iter().map(|s| s * scale).collect());
    scores = softmax_rows(&scores, None)?;
    let weights = scores.into_vec();
    let out = vecmat(&weights, tokens)?;
    Ok((out, DinCache { u, weights }))
}

pub struct DinGrads {
    pub w: Matrix,
    pub tokens: Matrix,
    pub target: Vec<f32>,
}

pub fn din_backward(tokens: &Matrix, target: &[f32], w: &Matrix, cache: &DinCache, grad: &[f32]) -> tensor::Result<DinGrads> {
    let (n, d) = tokens.shape();
    let mut gw = Matrix::zeros(d, d);
    if n == 0 {
        return Ok(DinGrads {
            w: gw,
            tokens: Matrix::zeros(0, d),
            target: vec![0.0; d],
        });
    }
    let scale = 1.0 / (d as f32).sqrt();
    let a = &cache.weights;
    let ga = matvec(tokens, grad)?;
    let mean: f32 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
    let gs: Vec<f32> = a.iter().zip(&ga).map(|(&x, &y)| x * (y - mean) * scale).collect();
    let mut gt = Matrix::zeros(n, d);
    for j in 0..n {
        let row = gt.row_mut(j);
        tensor::axpy(row, a[j], grad);
        tensor::axpy(row, gs[j], &cache.u);
    }
    let gu = vecmat(&gs, tokens)?;
    tensor::add_outer(&mut gw, target, &gu);
    let gtarget = matvec(w, &gu)?;
    Ok(DinGrads {
        w: gw,
        tokens: gt,
        target: gtarget,
    })
}

#[derive(Debug, Clone)]
pub struct SelfAttnCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
}

pub struct SelfAttnWeights<'a> {
    pub w_q: &'a Matrix,
    pub w_k: &'a Matrix,
    pub w_v: &'a Matrix,
}

/// One softmax self-attention layer with a residual, mean-pooled over rows:
/// `mean(softmax(Q Kᵀ / √d) V + X)`.
pub fn self_attention_forward(x: &Matrix, p: &SelfAttnWeights<'_>) -> tensor::Result<(Vec<f32>, SelfAttnCache)> {
    let (n, d) = x.shape();
    let q = matmul(x, p.w_q)?;
    let k = matmul(x, p.w_k)?;
    let v = matmul(x, p.w_v)?;
    if n == 0 {
        let attn = Matrix::zeros(0, 0);
        return Ok((vec![0.0; d], SelfAttnCache { q, k, v, attn }));
    }
    let scale = 1.0 / (d as f32).sqrt();
    let attn = softmax_rows(&matmul_nt(&q, &k)?.scale(scale), None)?;
    let y = matmul(&attn, &v)?.add(x)?;
    Ok((mean_pool(&y), SelfAttnCache { q, k, v, attn }))
}

pub struct SelfAttnGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub tokens: Matrix,
}

pub fn self_attention_backward(
    x: &Matrix,
    p: &SelfAttnWeights<'_>,
    cache: &SelfAttnCache,
    grad: &[f32],
) -> tensor::Result<SelfAttnGrads> {
    let (n, d) = x.shape();
    if n == 0 {
        return Ok(SelfAttnGrads {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            tokens: Matrix::zeros(0, d),
        });
    }
    let scale = 1.0 / (d as f32).sqrt();
    let gy = mean_pool_backward(n, grad);
    let ga = matmul_nt(&gy, &cache.v)?;
    let gv = matmul_tn(&cache.attn, &gy)?;
    let mut gs = Matrix::zeros(n, n);
    for i in 0..n {
        let a = cache.attn.row(i);
        let g = ga.row(i);
        let m: f32 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for (o, (&ai, &gi)) in gs.row_mut(i).iter_mut().zip(a.iter().zip(g)) {
            *o = ai * (gi - m) * scale;
        }
    }
    let gq = matmul(&gs, &cache.k)?;
    let gk = matmul_tn(&gs, &cache.q)?;
    let mut gx = gy;
    gx.add_assign(&matmul_nt(&gq, p.w_q)?)?;
    gx.add_assign(&matmul_nt(&gk, p.w_k)?)?;
    gx.add_assign(&matmul_nt(&gv, p.w_v)?)?;
    Ok(SelfAttnGrads {
        w_q: matmul_tn(x, &gq)?,
        w_k: matmul_tn(x, &gk)?,
        w_v: matmul_tn(x, &gv)?,
        tokens: gx,
    })
}
