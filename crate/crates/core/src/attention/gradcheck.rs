//! Central finite differences, used as the oracle for hand-written gradients.

use super::params::Parameters;

/// Numeric gradient of `loss` at `x`. The step actually taken is the f32
/// difference `(x + h) - (x - h)`, so a linear loss is recovered exactly.
pub fn finite_diff_grad(x: &[f32], h: f32, mut loss: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            let plus = orig + h;
            let minus = orig - h;
            probe[i] = plus;
            let fp = loss(&probe);
            probe[i] = minus;
            let fm = loss(&probe);
            probe[i] = orig;
            (fp - fm) / (plus as f64 - minus as f64)
        })
        .collect()
}

/// Numeric gradient of `loss` with respect to every named tensor of `params`.
pub fn finite_diff_params<P: Parameters + Clone>(
    params: &P,
    h: f32,
    mut loss: impl FnMut(&P) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut probe = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    names
        .into_iter()
        .enumerate()
        .map(|(t, name)| {
            let len = probe.tensors_mut()[t].1.len();
            let grads = (0..len)
                .map(|i| {
                    let orig = probe.tensors_mut()[t].1[i];
                    let (plus, minus) = (orig + h, orig - h);
                    probe.tensors_mut()[t].1[i] = plus;
                    let fp = loss(&probe);
                    probe.tensors_mut()[t].1[i] = minus;
                    let fm = loss(&probe);
                    probe.tensors_mut()[t].1[i] = orig;
                    (fp - fm) / (plus as f64 - minus as f64)
                })
                .collect();
            (name, grads)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matmul, Matrix};

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(&[3.0], 1e-3, |x| (x[0] as f64).powi(2));
        assert!((g[0] - 6.0).abs() < 1e-5, "{}", g[0]);
    }

    #[test]
    fn linear_is_exact_for_any_step() {
        for h in [1e-1f32, 1e-2, 0.5] {
            let g = finite_diff_grad(&[1.5, -2.0], h, |x| 3.0 * x[0] as f64 - 0.5 * x[1] as f64);
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradient_3x3() {
        // loss = sum(A·B ⊙ G); dL/dA = G·Bᵀ
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0], vec![2.0, 1.0, -2.0]]);
        let b = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 0.0], vec![-0.5, 2.0, 1.0]]);
        let g = Matrix::from_rows(&[vec![1.0, 0.0, -1.0], vec![2.0, 1.0, 0.5], vec![0.0, -1.0, 1.0]]);
        let loss = |x: &[f32]| {
            let am = Matrix::from_vec(3, 3, x.to_vec());
            let p = matmul(&am, &b).unwrap();
            p.data().iter().zip(g.data()).map(|(x, y)| (x * y) as f64).sum::<f64>()
        };
        let num = finite_diff_grad(a.data(), 1e-2, loss);
        for i in 0..3 {
            for j in 0..3 {
                let analytic: f32 = (0..3).map(|k| g.get(i, k) * b.get(j, k)).sum();
                assert!((num[i * 3 + j] - analytic as f64).abs() < 1e-4);
            }
        }
    }
}
