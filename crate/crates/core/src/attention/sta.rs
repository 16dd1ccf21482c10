//! Segmented target attention: the history is cut into windows of `w`
//! tokens and each window is collapsed into one vector by gating every token
//! against the target.

use super::config::{GateKind, LaserConfig};
use super::params::{RecencyTable, StaParams};
use super::AttentionError;
use crate::tensor::{
    self, add_outer, flop_counter, matmul, matmul_nt, matmul_tn, reshape_segments, sigmoid_scalar,
    softmax_in_place, vecmat, Matrix, Vector,
};

/// One user's history and a candidate item.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatchInput {
    /// History tokens, most recent first.
    pub tokens: Matrix,
    /// Event time of each history row, in seconds.
    pub timestamps: Vec<i64>,
    pub request_time: i64,
    /// Rows at or beyond this index are padding.
    pub valid_len: usize,
    pub target: Vector,
}

impl SequenceBatchInput {
    pub fn validate(&self, cfg: &LaserConfig) -> Result<(), AttentionError> {
        let d = cfg.embed_dim;
        if self.tokens.cols() != d || self.target.dim() != d {
            return Err(AttentionError::Shape(format!(
                "tokens {:?} / target {} do not match embed_dim {d}",
                self.tokens.shape(),
                self.target.dim()
            )));
        }
        if self.timestamps.len() != self.tokens.rows() {
            return Err(AttentionError::Shape(format!(
                "{} timestamps for {} tokens",
                self.timestamps.len(),
                self.tokens.rows()
            )));
        }
        if self.valid_len > self.tokens.rows() {
            return Err(AttentionError::Shape(format!(
                "valid_len {} exceeds {} tokens",
                self.valid_len,
                self.tokens.rows()
            )));
        }
        Ok(())
    }

    /// Validity of each of the first `padded_len` positions.
    pub fn position_mask(&self, padded_len: usize) -> Vec<bool> {
        (0..padded_len).map(|i| i < self.valid_len).collect()
    }
}

/// Tokens after the recency embedding has been added.
#[derive(Debug, Clone)]
pub struct RecencyApplied {
    pub tokens: Matrix,
    /// Bucket of each valid row.
    pub buckets: Vec<usize>,
    /// Rows whose event time was after the request time (clamped to age 0).
    pub clamped: usize,
}

/// Adds `table[bucket(request_time - ts)]` to every valid row.
pub fn apply_recency(input: &SequenceBatchInput, table: &RecencyTable) -> RecencyApplied {
    let mut tokens = input.tokens.clone();
    let mut buckets = Vec::with_capacity(input.valid_len);
    let mut clamped = 0;
    for i in 0..input.valid_len {
        let mut delta = input.request_time - input.timestamps[i];
        if delta < 0 {
            clamped += 1;
            delta = 0;
        }
        let b = table.bucket(delta as f64);
        buckets.push(b);
        tensor::axpy(tokens.row_mut(i), 1.0, table.table.row(b));
    }
    flop_counter::add((input.valid_len * tokens.cols()) as u64);
    RecencyApplied {
        tokens,
        buckets,
        clamped,
    }
}

/// Splits `h` into consecutive `w`-row segments.
pub fn split_seq(h: &Matrix, w: usize) -> Result<Vec<Matrix>, AttentionError> {
    let view = reshape_segments(h, w)?;
    Ok((0..view.shape().0).map(|i| view.segment(i)).collect())
}

/// Compressed segments and the per-position gate values.
#[derive(Debug, Clone, PartialEq)]
pub struct StaOutput {
    /// `L' × d`, one row per segment.
    pub compressed: Matrix,
    /// `heads × L`; padding positions are exactly zero.
    pub scores: Matrix,
}

/// Intermediates of the vectorized pass needed for backward.
#[derive(Debug, Clone)]
pub struct StaCache {
    pub query: Vec<f32>,
    pub keys: Matrix,
    pub values: Matrix,
}

fn check_shapes(
    target: &Vector,
    h: &Matrix,
    params: &StaParams,
    cfg: &LaserConfig,
    mask: &[bool],
) -> Result<(), AttentionError> {
    let d = cfg.embed_dim;
    if target.dim() != d || h.cols() != d {
        return Err(AttentionError::Shape(format!(
            "target {} / history {:?} vs embed_dim {d}",
            target.dim(),
            h.shape()
        )));
    }
    if params.w_q.shape() != (d, cfg.qk_dim)
        || params.w_k.shape() != (d, cfg.qk_dim)
        || params.w_v.shape() != (d, d)
    {
        return Err(AttentionError::Shape(format!(
            "STA projections {:?}/{:?}/{:?} do not match d={d}, d_q={}",
            params.w_q.shape(),
            params.w_k.shape(),
            params.w_v.shape(),
            cfg.qk_dim
        )));
    }
    if mask.len() != h.rows() {
        return Err(AttentionError::Shape(format!(
            "mask length {} vs {} positions",
            mask.len(),
            h.rows()
        )));
    }
    if !h.rows().is_multiple_of(cfg.segment_w) {
        return Err(AttentionError::Tensor(tensor::TensorError::NotDivisible {
            op: "sta",
            len: h.rows(),
            w: cfg.segment_w,
        }));
    }
    Ok(())
}

/// Turns one segment's pre-activations into gate values in place.
fn gate_segment(pre: &mut [f32], valid: &[bool], gate: GateKind) {
    match gate {
        GateKind::Sigmoid => {
            for (p, &ok) in pre.iter_mut().zip(valid) {
                *p = if ok { sigmoid_scalar(*p) } else { 0.0 };
            }
        }
        GateKind::Softmax => {
            if !softmax_in_place(pre, Some(valid)) {
                pre.iter_mut().for_each(|p| *p = 0.0);
            }
        }
    }
}

/// Reference STA: every segment is projected and gated on its own.
pub fn sta_naive(
    target: &Vector,
    h: &Matrix,
    params: &StaParams,
    cfg: &LaserConfig,
    mask: &[bool],
) -> Result<StaOutput, AttentionError> {
    check_shapes(target, h, params, cfg, mask)?;
    let (w, heads) = (cfg.segment_w, cfg.heads);
    let (dqh, dvh) = (cfg.head_qk_dim(), cfg.head_v_dim());
    let segments = split_seq(h, w)?;
    let mut compressed = Matrix::zeros(segments.len(), cfg.embed_dim);
    let mut scores = Matrix::zeros(heads, h.rows());
    for (i, seg) in segments.iter().enumerate() {
        let q = vecmat(target.data(), &params.w_q)?;
        let k = matmul(seg, &params.w_k)?;
        let v = matmul(seg, &params.w_v)?;
        let valid = &mask[i * w..(i + 1) * w];
        for hd in 0..heads {
            let qh = &q[hd * dqh..(hd + 1) * dqh];
            let mut pre: Vec<f32> = (0..w)
                .map(|j| tensor::dot(qh, &k.row(j)[hd * dqh..(hd + 1) * dqh]) / cfg.gamma)
                .collect();
            gate_segment(&mut pre, valid, cfg.gate);
            let out = &mut compressed.row_mut(i)[hd * dvh..(hd + 1) * dvh];
            for (j, &a) in pre.iter().enumerate() {
                tensor::axpy(out, a, &v.row(j)[hd * dvh..(hd + 1) * dvh]);
            }
            scores.row_mut(hd)[i * w..(i + 1) * w].copy_from_slice(&pre);
        }
        flop_counter::add((w * 2 * cfg.qk_dim + w * 2 * cfg.embed_dim) as u64);
        flop_counter::add_macs((w * cfg.qk_dim + w * cfg.embed_dim) as u64);
    }
    Ok(StaOutput { compressed, scores })
}

/// STA computed with one global projection and a segment reshape; yields the
/// same result as [`sta_naive`].
pub fn sta_vectorized(
    target: &Vector,
    h: &Matrix,
    params: &StaParams,
    cfg: &LaserConfig,
    mask: &[bool],
) -> Result<StaOutput, AttentionError> {
    sta_vectorized_cached(target, h, params, cfg, mask).map(|(o, _)| o)
}

pub fn sta_vectorized_cached(
    target: &Vector,
    h: &Matrix,
    params: &StaParams,
    cfg: &LaserConfig,
    mask: &[bool],
) -> Result<(StaOutput, StaCache), AttentionError> {
    check_shapes(target, h, params, cfg, mask)?;
    let (w, heads, len) = (cfg.segment_w, cfg.heads, h.rows());
    let (dqh, dvh) = (cfg.head_qk_dim(), cfg.head_v_dim());

    let query = vecmat(target.data(), &params.w_q)?;
    let keys = matmul(h, &params.w_k)?;
    let values = matmul(h, &params.w_v)?;

    let mut scores = Matrix::zeros(heads, len);
    for hd in 0..heads {
        let qh = &query[hd * dqh..(hd + 1) * dqh];
        let row = scores.row_mut(hd);
        for (j, s) in row.iter_mut().enumerate() {
            *s = tensor::dot(qh, &keys.row(j)[hd * dqh..(hd + 1) * dqh]) / cfg.gamma;
        }
        match cfg.gate {
            GateKind::Sigmoid => {
                for (s, &ok) in row.iter_mut().zip(mask) {
                    *s = if ok { sigmoid_scalar(*s) } else { 0.0 };
                }
            }
            GateKind::Softmax => {
                for (seg, valid) in row.chunks_mut(w).zip(mask.chunks(w)) {
                    gate_segment(seg, valid, GateKind::Softmax);
                }
            }
        }
    }
    flop_counter::add((len * 2 * cfg.qk_dim) as u64);
    flop_counter::add_macs((len * cfg.qk_dim) as u64);

    // (L', 1, w) × (L', w, d) batched product, squeezed to (L', d)
    let view = reshape_segments(&values, w)?;
    let (segs, _, _) = view.shape();
    let mut compressed = Matrix::zeros(segs, cfg.embed_dim);
    for i in 0..segs {
        let out = compressed.row_mut(i);
        for j in 0..w {
            let vrow = view.row(i, j);
            for hd in 0..heads {
                let a = scores.get(hd, i * w + j);
                if a != 0.0 {
                    tensor::axpy(
                        &mut out[hd * dvh..(hd + 1) * dvh],
                        a,
                        &vrow[hd * dvh..(hd + 1) * dvh],
                    );
                }
            }
        }
    }
    flop_counter::add((len * 2 * cfg.embed_dim) as u64);
    flop_counter::add_macs((len * cfg.embed_dim) as u64);
    Ok((
        StaOutput { compressed, scores },
        StaCache {
            query,
            keys,
            values,
        },
    ))
}

/// Gradients produced by [`sta_backward`].
#[derive(Debug, Clone)]
pub struct StaGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub history: Matrix,
    pub target: Vec<f32>,
}

/// Backpropagates `grad_compressed` (`L' × d`) through the vectorized STA.
#[allow(clippy::too_many_arguments)]
pub fn sta_backward(
    target: &Vector,
    h: &Matrix,
    params: &StaParams,
    cfg: &LaserConfig,
    mask: &[bool],
    out: &StaOutput,
    cache: &StaCache,
    grad_compressed: &Matrix,
) -> Result<StaGrads, AttentionError> {
    let (w, heads, len) = (cfg.segment_w, cfg.heads, h.rows());
    let (dqh, dvh) = (cfg.head_qk_dim(), cfg.head_v_dim());
    let scores = &out.scores;

    let mut grad_values = Matrix::zeros(len, cfg.embed_dim);
    let mut grad_scores = Matrix::zeros(heads, len);
    for j in 0..len {
        if !mask[j] {
            continue;
        }
        let g = grad_compressed.row(j / w);
        let v = cache.values.row(j);
        let gv = grad_values.row_mut(j);
        for hd in 0..heads {
            let a = scores.get(hd, j);
            let cols = hd * dvh..(hd + 1) * dvh;
            tensor::axpy(&mut gv[cols.clone()], a, &g[cols.clone()]);
            grad_scores.set(hd, j, tensor::dot(&g[cols.clone()], &v[cols]));
        }
    }

    // through the gate
    let mut grad_pre = Matrix::zeros(heads, len);
    for hd in 0..heads {
        let s = scores.row(hd);
        let gs = grad_scores.row(hd);
        let gp = grad_pre.row_mut(hd);
        match cfg.gate {
            GateKind::Sigmoid => {
                for j in 0..len {
                    if mask[j] {
                        gp[j] = gs[j] * s[j] * (1.0 - s[j]);
                    }
                }
            }
            GateKind::Softmax => {
                for seg in 0..len / w {
                    let r = seg * w..(seg + 1) * w;
                    let inner: f32 = r.clone().map(|j| s[j] * gs[j]).sum();
                    for j in r {
                        if mask[j] {
                            gp[j] = s[j] * (gs[j] - inner);
                        }
                    }
                }
            }
        }
    }

    let inv_gamma = 1.0 / cfg.gamma;
    let mut grad_query = vec![0.0f32; cfg.qk_dim];
    let mut grad_keys = Matrix::zeros(len, cfg.qk_dim);
    for hd in 0..heads {
        let cols = hd * dqh..(hd + 1) * dqh;
        let qh = &cache.query[cols.clone()];
        for j in 0..len {
            let g = grad_pre.get(hd, j) * inv_gamma;
            if g == 0.0 {
                continue;
            }
            tensor::axpy(&mut grad_query[cols.clone()], g, &cache.keys.row(j)[cols.clone()]);
            tensor::axpy(&mut grad_keys.row_mut(j)[cols.clone()], g, qh);
        }
    }

    let mut w_q = Matrix::zeros(cfg.embed_dim, cfg.qk_dim);
    add_outer(&mut w_q, target.data(), &grad_query);
    let target_grad = tensor::matvec(&params.w_q, &grad_query)?;
    let w_k = matmul_tn(h, &grad_keys)?;
    let w_v = matmul_tn(h, &grad_values)?;
    let mut history = matmul_nt(&grad_keys, &params.w_k)?;
    history.add_assign(&matmul_nt(&grad_values, &params.w_v)?)?;
    Ok(StaGrads {
        w_q,
        w_k,
        w_v,
        history,
        target: target_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::params::StaParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Scalar f64 loop over segments, heads and positions.
    fn scalar_oracle(
        t: &Vector,
        h: &Matrix,
        p: &StaParams,
        cfg: &LaserConfig,
        mask: &[bool],
    ) -> Vec<Vec<f64>> {
        let (w, d, dq) = (cfg.segment_w, cfg.embed_dim, cfg.qk_dim);
        let (dqh, dvh) = (dq / cfg.heads, d / cfg.heads);
        let mut q = vec![0.0f64; dq];
        for c in 0..dq {
            for k in 0..d {
                q[c] += t.data()[k] as f64 * p.w_q.get(k, c) as f64;
            }
        }
        let mut out = vec![vec![0.0f64; d]; h.rows() / w];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..w {
                let pos = i * w + j;
                if !mask[pos] {
                    continue;
                }
                for hd in 0..cfg.heads {
                    let mut pre = 0.0f64;
                    for c in hd * dqh..(hd + 1) * dqh {
                        let mut kc = 0.0f64;
                        for k in 0..d {
                            kc += h.get(pos, k) as f64 * p.w_k.get(k, c) as f64;
                        }
                        pre += q[c] * kc;
                    }
                    let a = 1.0 / (1.0 + (-pre / cfg.gamma as f64).exp());
                    for c in hd * dvh..(hd + 1) * dvh {
                        let mut vc = 0.0f64;
                        for k in 0..d {
                            vc += h.get(pos, k) as f64 * p.w_v.get(k, c) as f64;
                        }
                        o[c] += a * vc;
                    }
                }
            }
        }
        out
    }

    fn instance(seed: u64, cfg: &LaserConfig, len: usize) -> (Vector, Matrix, StaParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = StaParams::init(cfg, &mut rng);
        let t = Vector::from_vec((0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        (t, random(&mut rng, len, cfg.embed_dim), p)
    }

    #[test]
    fn naive_matches_scalar_oracle() {
        let cfg = LaserConfig::new(20, 8, 4, 5, 2);
        let (t, h, p) = instance(5, &cfg, 20);
        let mask: Vec<bool> = (0..20).map(|i| i < 17).collect();
        let got = sta_naive(&t, &h, &p, &cfg, &mask).unwrap();
        let want = scalar_oracle(&t, &h, &p, &cfg, &mask);
        for (i, row) in want.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((got.compressed.get(i, c) as f64 - v).abs() < 1e-6, "seg {i} col {c}");
            }
        }
    }

    #[test]
    fn two_heads_match_scalar_oracle() {
        let mut cfg = LaserConfig::new(12, 8, 4, 4, 1);
        cfg.heads = 2;
        let cfg = cfg.with_default_gamma();
        let (t, h, p) = instance(9, &cfg, 12);
        let mask = vec![true; 12];
        let got = sta_vectorized(&t, &h, &p, &cfg, &mask).unwrap();
        let want = scalar_oracle(&t, &h, &p, &cfg, &mask);
        for (i, row) in want.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((got.compressed.get(i, c) as f64 - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_keys_give_half_gates() {
        let cfg = LaserConfig::new(6, 4, 2, 3, 1);
        let (t, h, mut p) = instance(2, &cfg, 6);
        p.w_k = Matrix::zeros(4, 2);
        let mask = vec![true; 6];
        let out = sta_naive(&t, &h, &p, &cfg, &mask).unwrap();
        assert!(out.scores.data().iter().all(|&s| s == 0.5));
        let v = matmul(&h, &p.w_v).unwrap();
        for i in 0..2 {
            for c in 0..4 {
                let sum: f32 = (0..3).map(|j| v.get(i * 3 + j, c)).sum();
                assert!((out.compressed.get(i, c) - 0.5 * sum).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fully_masked_segment_is_silent() {
        let cfg = LaserConfig::new(6, 4, 2, 3, 1);
        let (t, h, p) = instance(3, &cfg, 6);
        let mask = vec![true, true, true, false, false, false];
        for gate in [GateKind::Sigmoid, GateKind::Softmax] {
            let mut c = cfg.clone();
            c.gate = gate;
            let out = sta_vectorized(&t, &h, &p, &c, &mask).unwrap();
            assert!(out.compressed.row(1).iter().all(|&x| x == 0.0));
            assert!(out.scores.data()[3..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn window_of_one_scales_values() {
        let cfg = LaserConfig::new(5, 4, 2, 1, 1);
        let (t, h, p) = instance(4, &cfg, 5);
        let mask = vec![true; 5];
        let out = sta_vectorized(&t, &h, &p, &cfg, &mask).unwrap();
        let v = matmul(&h, &p.w_v).unwrap();
        for i in 0..5 {
            for c in 0..4 {
                assert_eq!(out.compressed.get(i, c), out.scores.get(0, i) * v.get(i, c));
            }
        }
    }

    #[test]
    fn split_seq_partitions() {
        let h = Matrix::from_fn(6, 2, |i, j| (i * 2 + j) as f32);
        let parts = split_seq(&h, 3).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].row(0), h.row(3));
        assert_eq!(Matrix::vstack(&parts).unwrap(), h);
        assert_eq!(split_seq(&h, 6).unwrap(), vec![h.clone()]);
        assert!(split_seq(&h, 4).is_err());
    }

    #[test]
    fn recency_zero_table_and_buckets() {
        let d = 3;
        let tokens = Matrix::from_fn(3, d, |i, j| (i + j) as f32);
        let input = SequenceBatchInput {
            tokens: tokens.clone(),
            timestamps: vec![1000, 940, 0],
            request_time: 1000,
            valid_len: 2,
            target: Vector::zeros(d),
        };
        let zero = RecencyTable::with_edges(Matrix::zeros(3, d), vec![60.0, 3600.0]);
        assert_eq!(apply_recency(&input, &zero).tokens, tokens);

        let table = Matrix::from_fn(3, d, |i, _| (i + 1) as f32 * 100.0);
        let rt = RecencyTable::with_edges(table, vec![60.0, 3600.0]);
        let out = apply_recency(&input, &rt);
        assert_eq!(out.buckets, vec![0, 1]);
        assert_eq!(out.tokens.get(1, 0), tokens.get(1, 0) + 200.0);
        // padding row untouched
        assert_eq!(out.tokens.row(2), tokens.row(2));
    }

    #[test]
    fn recency_same_bucket_same_offset_and_clamps_skew() {
        let d = 2;
        let input = SequenceBatchInput {
            tokens: Matrix::zeros(3, d),
            timestamps: vec![990, 980, 1010],
            request_time: 1000,
            valid_len: 3,
            target: Vector::zeros(d),
        };
        let table = Matrix::from_fn(3, d, |i, j| (i * 10 + j) as f32);
        let rt = RecencyTable::with_edges(table, vec![5.0, 3600.0]);
        let out = apply_recency(&input, &rt);
        assert_eq!(out.tokens.row(0), out.tokens.row(1));
        assert_eq!(out.clamped, 1);
        assert_eq!(out.buckets[2], 0);
    }
}
