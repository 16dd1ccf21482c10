use serde::{Deserialize, Serialize};

use super::AttentionError;

/// Per-position gate used inside each STA segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Independent sigmoid gates; weights within a segment are unconstrained.
    #[default]
    Sigmoid,
    /// Softmax within each segment (ablation); weights sum to one.
    Softmax,
}

/// Shape and behaviour of a LASER encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    /// Nominal history length `L`.
    pub seq_len: usize,
    pub embed_dim: usize,
    /// Total query/key width across heads.
    pub qk_dim: usize,
    /// Segment width `w`.
    pub segment_w: usize,
    /// Number of stacked global target-attention layers.
    pub gsta_layers: usize,
    /// FFN hidden width is `ffn_ratio * embed_dim`.
    pub ffn_ratio: usize,
    /// Number of most recent compressed segments exposed to fusion.
    pub recent_k: usize,
    /// STA score scale.
    pub gamma: f32,
    pub heads: usize,
    pub recency_buckets: usize,
    #[serde(default)]
    pub gate: GateKind,
    #[serde(default = "yes")]
    pub use_fusion: bool,
    #[serde(default = "yes")]
    pub use_recency: bool,
}

fn yes() -> bool {
    true
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self::new(1000, 32, 8, 10, 2)
    }
}

impl LaserConfig {
    /// Single-head config with `γ = √d_q`, `ffn_ratio = 4`, `recent_k = 2`
    /// and 32 recency buckets.
    pub fn new(seq_len: usize, embed_dim: usize, qk_dim: usize, segment_w: usize, gsta_layers: usize) -> Self {
        Self {
            seq_len,
            embed_dim,
            qk_dim,
            segment_w,
            gsta_layers,
            ffn_ratio: 4,
            recent_k: 2,
            gamma: (qk_dim as f32).sqrt(),
            heads: 1,
            recency_buckets: 32,
            gate: GateKind::Sigmoid,
            use_fusion: true,
            use_recency: true,
        }
    }

    /// Two heads with 16 query/key dims each over 128-dim tokens, `w = 10`,
    /// two global layers.
    pub fn two_head_preset() -> Self {
        let mut c = Self::new(1000, 128, 32, 10, 2);
        c.heads = 2;
        c.gamma = 16f32.sqrt();
        c
    }

    /// Resets `gamma` to `√(d_q / heads)`.
    pub fn with_default_gamma(mut self) -> Self {
        self.gamma = ((self.qk_dim / self.heads.max(1)) as f32).sqrt();
        self
    }

    pub fn head_qk_dim(&self) -> usize {
        self.qk_dim / self.heads
    }

    pub fn head_v_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_ratio * self.embed_dim
    }

    /// Number of segments needed for a history of `rows` tokens.
    pub fn segments_for(&self, rows: usize) -> usize {
        rows.div_ceil(self.segment_w).max(self.recent_k).max(1)
    }

    /// `L' = ⌈L / w⌉` for the nominal length.
    pub fn compressed_len(&self) -> usize {
        self.segments_for(self.seq_len)
    }

    /// Width of the fused output vector.
    pub fn fused_dim(&self) -> usize {
        if self.use_fusion {
            self.embed_dim * (2 + self.recent_k)
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |msg: String| Err(AttentionError::Config(msg));
        if self.embed_dim == 0 || self.qk_dim == 0 || self.segment_w == 0 {
            return bad("embed_dim, qk_dim and segment_w must be positive".into());
        }
        if self.qk_dim > self.embed_dim {
            return bad(format!("qk_dim {} exceeds embed_dim {}", self.qk_dim, self.embed_dim));
        }
        if self.gsta_layers == 0 {
            return bad("gsta_layers must be at least 1".into());
        }
        if self.heads == 0 || !self.qk_dim.is_multiple_of(self.heads) || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "heads {} must divide qk_dim {} and embed_dim {}",
                self.heads, self.qk_dim, self.embed_dim
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.seq_len > 0 && self.recent_k > self.seq_len.div_ceil(self.segment_w) {
            return bad(format!(
                "recent_k {} exceeds compressed length {}",
                self.recent_k,
                self.seq_len.div_ceil(self.segment_w)
            ));
        }
        if self.recency_buckets == 0 {
            return bad("recency_buckets must be positive".into());
        }
        if self.ffn_ratio == 0 {
            return bad("ffn_ratio must be positive".into());
        }
        Ok(())
    }
}
