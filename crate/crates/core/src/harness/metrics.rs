//! Binary cross-entropy and ROC AUC.

use super::HarnessError;

pub const PRED_CLAMP: f64 = 1e-7;

/// Loss of probability `pred` against `label`, and its derivative with
/// respect to the logit that produced `pred` through a sigmoid.
pub fn bce_loss(pred: f64, label: f64) -> (f64, f64) {
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    (loss, pred - label)
}

/// Numerically stable `bce_loss(sigmoid(logit), label)`.
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    // ln(1 + e^-|x|) form, then the same clamp as `bce_loss`
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let raw = label * softplus(-logit) + (1.0 - label) * softplus(logit);
    let max_loss = -(PRED_CLAMP.ln());
    (raw.min(max_loss), p - label)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean `bce_loss` over a set of predictions.
pub fn logloss(preds: &[f64], labels: &[bool]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, if y { 1.0 } else { 0.0 }).0)
        .sum();
    total / preds.len() as f64
}

/// Mann-Whitney statistic: the fraction of (positive, negative) pairs the
/// scores order correctly, ties counting one half. Sorts once and walks tie
/// groups, so it is `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::Config(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HarnessError::Config("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HarnessError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled win count keeps ties exact in integers
    let mut wins2: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut p, mut n) = (0u64, 0u64);
        for &k in &order[i..j] {
            if labels[k] {
                p += 1;
            } else {
                n += 1;
            }
        }
        wins2 += p as u128 * (2 * neg_below as u128 + n as u128);
        neg_below += n;
        i = j;
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_costs_ln2() {
        for y in [0.0, 1.0] {
            assert!((bce_loss(0.5, y).0 - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        assert!(bce_loss(1.0 - 1e-12, 1.0).0 < 1e-6);
        assert!(bce_loss(1e-12, 0.0).0 < 1e-6);
    }

    #[test]
    fn clamp_bounds_the_loss() {
        let max = -(PRED_CLAMP.ln());
        assert!((bce_loss(0.0, 1.0).0 - max).abs() < 1e-9);
        assert!((bce_with_logit(-80.0, 1.0).0 - max).abs() < 1e-9);
    }

    #[test]
    fn logit_form_matches_probability_form() {
        for &x in &[-6.0, -1.0, 0.0, 0.3, 4.0] {
            for y in [0.0, 1.0] {
                let (a, ga) = bce_with_logit(x, y);
                let (b, gb) = bce_loss(sigmoid(x), y);
                assert!((a - b).abs() < 1e-9, "{x} {y}");
                assert_eq!(ga, gb);
            }
        }
    }

    #[test]
    fn small_auc_example() {
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn auc_limits() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(HarnessError::SingleClass)));
    }
}
