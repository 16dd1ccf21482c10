use super::AttentionError;
use crate::tensor::{Matrix, Vector};

/// Everything the encoder hands to the prediction head, plus the
/// intermediates tests look at.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub z: Vector,
    pub max_pooled: Vector,
    pub recent_segments: Vec<Vector>,
    /// `[z ‖ max_pooled ‖ s_1 ‖ … ‖ s_k]`, or just `z` with fusion disabled.
    pub fused: Vector,
    /// Refined compressed sequence `L' × d`; masked segments are zero rows.
    pub compressed: Matrix,
    /// STA gates, head-major (`heads × L'·w` flattened).
    pub sta_scores: Vector,
}

/// Column-wise max over unmasked rows, remembering which row won each column.
pub(crate) fn masked_max_pool(
    compressed: &Matrix,
    seg_mask: &[bool],
) -> Result<(Vector, Vec<usize>), AttentionError> {
    let d = compressed.cols();
    let mut best = vec![f32::NEG_INFINITY; d];
    let mut arg = vec![usize::MAX; d];
    for (i, _) in seg_mask.iter().enumerate().filter(|(_, &m)| m) {
        for (c, &v) in compressed.row(i).iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = i;
            }
        }
    }
    if arg.contains(&usize::MAX) && d > 0 {
        return Err(AttentionError::AllSegmentsMasked);
    }
    Ok((Vector::from_vec(best), arg))
}

/// Concatenates the global vector, the max-pooled segments and the first
/// `recent_k` segments (the history is ordered most recent first). Recent
/// slots that fall on masked segments carry the (zero) masked row.
pub fn fuse(
    z: &Vector,
    compressed: &Matrix,
    recent_k: usize,
    seg_mask: &[bool],
) -> Result<FusionOutput, AttentionError> {
    fuse_with_argmax(z, compressed, recent_k, seg_mask).map(|(f, _)| f)
}

pub(crate) fn fuse_with_argmax(
    z: &Vector,
    compressed: &Matrix,
    recent_k: usize,
    seg_mask: &[bool],
) -> Result<(FusionOutput, Vec<usize>), AttentionError> {
    if recent_k > compressed.rows() {
        return Err(AttentionError::Shape(format!(
            "recent_k {recent_k} exceeds {} segments",
            compressed.rows()
        )));
    }
    let (max_pooled, arg) = masked_max_pool(compressed, seg_mask)?;
    let recent_segments: Vec<Vector> = (0..recent_k)
        .map(|i| Vector::from_vec(compressed.row(i).to_vec()))
        .collect();
    let mut fused = Vec::with_capacity(z.dim() * (2 + recent_k));
    fused.extend_from_slice(z.data());
    fused.extend_from_slice(max_pooled.data());
    for r in &recent_segments {
        fused.extend_from_slice(r.data());
    }
    Ok((
        FusionOutput {
            z: z.clone(),
            max_pooled,
            recent_segments,
            fused: Vector::from_vec(fused),
            compressed: compressed.clone(),
            sta_scores: Vector::zeros(0),
        },
        arg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_fusion() {
        let z = Vector::from_vec(vec![1.0, 2.0]);
        let h = Matrix::from_rows(&[vec![3.0, -4.0]]);
        let f = fuse(&z, &h, 1, &[true]).unwrap();
        assert_eq!(f.fused.data(), &[1.0, 2.0, 3.0, -4.0, 3.0, -4.0]);
    }

    #[test]
    fn max_pool_skips_masked_rows() {
        let z = Vector::zeros(2);
        let h = Matrix::from_rows(&[vec![1.0, -5.0], vec![9.0, 9.0], vec![2.0, -1.0]]);
        let f = fuse(&z, &h, 2, &[true, false, true]).unwrap();
        assert_eq!(f.max_pooled.data(), &[2.0, -1.0]);
        assert_eq!(f.fused.dim(), 2 * (2 + 2));
        assert!(fuse(&z, &h, 4, &[true; 3]).is_err());
    }
}
