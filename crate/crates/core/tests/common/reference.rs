//! Double-precision reference of the full encoder, written as plain scalar
//! loops independent of the library kernels.

use laser_core::attention::{GateKind, LaserConfig, LaserParams, SequenceBatchInput};
use laser_core::tensor::Matrix;

type M = Vec<Vec<f64>>;

fn to64(m: &Matrix) -> M {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&x| x as f64).collect())
        .collect()
}

fn v64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn mm(a: &M, b: &M) -> M {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn vm(v: &[f64], b: &M) -> Vec<f64> {
    mm(&vec![v.to_vec()], b).remove(0)
}

fn softmax_masked(x: &[f64], valid: &[bool]) -> Vec<f64> {
    if !valid.iter().any(|&v| v) {
        return vec![0.0; x.len()];
    }
    let mx = x
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(a, _)| *a)
        .fold(f64::MIN, f64::max);
    let e: Vec<f64> = x
        .iter()
        .zip(valid)
        .map(|(a, &v)| if v { (a - mx).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|a| a / s).collect()
}

/// Fused output of the encoder evaluated in f64.
pub fn reference_forward(input: &SequenceBatchInput, p: &LaserParams, cfg: &LaserConfig) -> Vec<f64> {
    reference_forward_with_pattern(input, p, cfg).0
}

/// Fused output plus the activation pattern (ReLU on/off bits and max-pool
/// argmaxes). Two evaluations with the same pattern lie on the same smooth
/// piece of the function.
pub fn reference_forward_with_pattern(
    input: &SequenceBatchInput,
    p: &LaserParams,
    cfg: &LaserConfig,
) -> (Vec<f64>, Vec<usize>) {
    let mut pattern = Vec::new();
    let (d, w) = (cfg.embed_dim, cfg.segment_w);
    let rows = input.tokens.rows();
    let segs = rows.div_ceil(w).max(cfg.recent_k).max(1);
    let len = segs * w;

    // recency + padding
    let mut x = vec![vec![0.0f64; d]; len];
    let table = to64(&p.recency.table);
    for i in 0..rows {
        for c in 0..d {
            x[i][c] = input.tokens.get(i, c) as f64;
        }
        if cfg.use_recency && i < input.valid_len {
            let delta = (input.request_time - input.timestamps[i]).max(0) as f64;
            let mut b = 0;
            while b < p.recency.bucket_edges.len() && p.recency.bucket_edges[b] as f64 <= delta {
                b += 1;
            }
            let b = b.min(table.len() - 1);
            for c in 0..d {
                x[i][c] += table[b][c];
            }
        }
    }
    let valid: Vec<bool> = (0..len).map(|i| i < input.valid_len).collect();

    // STA
    let t = v64(input.target.data());
    let q = vm(&t, &to64(&p.sta.w_q));
    let k = mm(&x, &to64(&p.sta.w_k));
    let v = mm(&x, &to64(&p.sta.w_v));
    let (dqh, dvh) = (cfg.qk_dim / cfg.heads, d / cfg.heads);
    let gamma = cfg.gamma as f64;
    let mut s = vec![vec![0.0f64; d]; segs];
    for (i, si) in s.iter_mut().enumerate() {
        for h in 0..cfg.heads {
            let pre: Vec<f64> = (0..w)
                .map(|j| {
                    (h * dqh..(h + 1) * dqh)
                        .map(|c| q[c] * k[i * w + j][c])
                        .sum::<f64>()
                        / gamma
                })
                .collect();
            let vmask = &valid[i * w..(i + 1) * w];
            let a: Vec<f64> = match cfg.gate {
                GateKind::Sigmoid => pre
                    .iter()
                    .zip(vmask)
                    .map(|(z, &ok)| if ok { 1.0 / (1.0 + (-z).exp()) } else { 0.0 })
                    .collect(),
                GateKind::Softmax => softmax_masked(&pre, vmask),
            };
            for j in 0..w {
                for c in h * dvh..(h + 1) * dvh {
                    si[c] += a[j] * v[i * w + j][c];
                }
            }
        }
    }

    // FFN + residual + LN
    let w1 = to64(&p.sta.ffn_w1);
    let w2 = to64(&p.sta.ffn_w2);
    let (b1, b2) = (v64(p.sta.ffn_b1.data()), v64(p.sta.ffn_b2.data()));
    let (g, beta) = (v64(p.sta.ln_gain.data()), v64(p.sta.ln_bias.data()));
    let data_seg: Vec<bool> = (0..segs).map(|i| valid[i * w]).collect();
    let mut hc = vec![vec![0.0f64; d]; segs];
    for i in 0..segs {
        if !data_seg[i] {
            continue;
        }
        let mut hid = vm(&s[i], &w1);
        for (hv, b) in hid.iter_mut().zip(&b1) {
            *hv += b;
            pattern.push(usize::from(*hv > 0.0));
            *hv = hv.max(0.0);
        }
        let f = vm(&hid, &w2);
        let y: Vec<f64> = (0..d).map(|c| f[c] + b2[c] + s[i][c]).collect();
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for c in 0..d {
            hc[i][c] = g[c] * (y[c] - mean) * inv + beta[c];
        }
    }
    let mut seg_mask = data_seg.clone();
    if !seg_mask.iter().any(|&m| m) {
        seg_mask[0] = true;
    }

    // GSTA
    let mut tcur = t.clone();
    for layer in &p.gsta {
        let ql = vm(&tcur, &to64(&layer.w_q));
        let kl = mm(&hc, &to64(&layer.w_k));
        let vl = mm(&hc, &to64(&layer.w_v));
        let e: Vec<f64> = kl
            .iter()
            .map(|kr| kr.iter().zip(&ql).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let a = softmax_masked(&e, &seg_mask);
        for (i, ai) in a.iter().enumerate() {
            for c in 0..d {
                tcur[c] += ai * vl[i][c];
            }
        }
    }

    if !cfg.use_fusion {
        return (tcur, pattern);
    }
    let mut out = tcur;
    for c in 0..d {
        let (arg, m) = (0..segs)
            .filter(|&i| seg_mask[i])
            .map(|i| (i, hc[i][c]))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        pattern.push(arg);
        out.push(m);
    }
    for r in hc.iter().take(cfg.recent_k) {
        out.extend_from_slice(r);
    }
    (out, pattern)
}

/// Central differences of `loss` on the reference, one coordinate at a time.
/// Coordinates whose `±h` step changes the activation pattern get `None`.
pub fn smooth_central_diff(
    x: &[f32],
    h: f32,
    mut eval: impl FnMut(&[f32]) -> (f64, Vec<usize>),
) -> Vec<Option<f64>> {
    let base = eval(x).1;
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = buf[i];
            buf[i] = orig + h;
            let hi = buf[i];
            let (fp, pp) = eval(&buf);
            buf[i] = orig - h;
            let lo = buf[i];
            let (fm, pm) = eval(&buf);
            buf[i] = orig;
            (pp == base && pm == base).then(|| (fp - fm) / (hi as f64 - lo as f64))
        })
        .collect()
}
