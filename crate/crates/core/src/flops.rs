//! Closed-form FLOP estimates for LASER and the two attention baselines.
//!
//! Each term carries the formula it was evaluated from, so a report can be
//! audited against hand arithmetic. `L / w` is taken as a real quotient.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::LaserConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsTerm {
    pub name: String,
    pub formula: String,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: String,
    pub terms: Vec<FlopsTerm>,
    pub total: f64,
    /// Simplified single-expression form, where the model has one.
    pub closed_form: Option<FlopsTerm>,
    pub config: LaserConfig,
}

impl FlopsReport {
    fn new(model: &str, cfg: &LaserConfig, terms: Vec<FlopsTerm>) -> Self {
        let total = terms.iter().map(|t| t.flops).sum();
        Self {
            model: model.to_string(),
            terms,
            total,
            closed_form: None,
            config: cfg.clone(),
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.flops)
    }
}

fn term(name: &str, formula: &str, flops: f64) -> FlopsTerm {
    FlopsTerm {
        name: name.to_string(),
        formula: formula.to_string(),
        flops,
    }
}

struct Dims {
    l: f64,
    d: f64,
    dq: f64,
    w: f64,
    m: f64,
    r: f64,
}

fn dims(cfg: &LaserConfig) -> Dims {
    Dims {
        l: cfg.seq_len as f64,
        d: cfg.embed_dim as f64,
        dq: cfg.qk_dim as f64,
        w: cfg.segment_w as f64,
        m: cfg.gsta_layers as f64,
        r: cfg.ffn_ratio as f64,
    }
}

/// Segment compression: projections, gating/aggregation and the FFN over the
/// compressed rows.
pub fn flops_sta(cfg: &LaserConfig) -> FlopsReport {
    let Dims { l, d, dq, w, r, .. } = dims(cfg);
    FlopsReport::new(
        "sta",
        cfg,
        vec![
            term("proj", "L*d^2 + L*d*d_q", l * d * d + l * d * dq),
            term("attn", "L*d_q + L*d", l * dq + l * d),
            term("ffn", "(L/w)*2*r*d^2", l / w * 2.0 * r * d * d),
        ],
    )
}

/// `M` global layers over the `L / w` compressed rows.
pub fn flops_gsta(cfg: &LaserConfig) -> FlopsReport {
    let Dims { l, d, w, m, .. } = dims(cfg);
    FlopsReport::new(
        "gsta",
        cfg,
        vec![term("layers", "M*(L/w)*(2*d^2 + 2*d)", m * (l / w) * (2.0 * d * d + 2.0 * d))],
    )
}

/// Sum of the STA and GSTA terms, with the simplified
/// `L*d^2*(1 + d_q/d + (2r + 2M)/w)` attached as `closed_form`.
pub fn flops_laser(cfg: &LaserConfig) -> FlopsReport {
    let Dims { l, d, dq, w, m, r } = dims(cfg);
    let mut terms = Vec::new();
    for part in [flops_sta(cfg), flops_gsta(cfg)] {
        for t in part.terms {
            terms.push(FlopsTerm {
                name: format!("{}.{}", part.model, t.name),
                ..t
            });
        }
    }
    let mut report = FlopsReport::new("laser", cfg, terms);
    let closed = if d > 0.0 {
        l * d * d * (1.0 + dq / d + (2.0 * r + 2.0 * m) / w)
    } else {
        0.0
    };
    report.closed_form = Some(term("closed_form", "L*d^2*(1 + d_q/d + (2r + 2M)/w)", closed));
    report
}

/// Full self-attention over the raw history.
pub fn flops_self_attention(cfg: &LaserConfig) -> FlopsReport {
    let Dims { l, d, .. } = dims(cfg);
    FlopsReport::new(
        "self_attention",
        cfg,
        vec![
            term("proj", "4*L*d^2", 4.0 * l * d * d),
            term("pairwise", "2*L^2*d", 2.0 * l * l * d),
        ],
    )
}

/// One target-attention layer over the raw history.
pub fn flops_target_attention(cfg: &LaserConfig) -> FlopsReport {
    let Dims { l, d, .. } = dims(cfg);
    FlopsReport::new(
        "target_attention",
        cfg,
        vec![
            term("proj", "2*L*d^2", 2.0 * l * d * d),
            term("attn", "2*L*d", 2.0 * l * d),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsComparison {
    pub laser: FlopsReport,
    pub self_attention: FlopsReport,
    pub target_attention: FlopsReport,
    /// Self-attention over the LASER closed form.
    pub sa_over_laser: f64,
    /// LASER closed form over target attention.
    pub laser_over_ta: f64,
}

pub fn compare_report(cfg: &LaserConfig) -> FlopsComparison {
    let laser = flops_laser(cfg);
    let self_attention = flops_self_attention(cfg);
    let target_attention = flops_target_attention(cfg);
    let closed = laser.closed_form.as_ref().map_or(laser.total, |t| t.flops);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    FlopsComparison {
        sa_over_laser: ratio(self_attention.total, closed),
        laser_over_ta: ratio(closed, target_attention.total),
        laser,
        self_attention,
        target_attention,
    }
}

impl fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} total={:.6e}", self.model, self.total)?;
        for t in &self.terms {
            writeln!(f, "  {:<14} {:>14.6e}  {}", t.name, t.flops, t.formula)?;
        }
        if let Some(t) = &self.closed_form {
            writeln!(f, "  {:<14} {:>14.6e}  {}", t.name, t.flops, t.formula)?;
        }
        Ok(())
    }
}

impl fmt::Display for FlopsComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.laser.config;
        writeln!(
            f,
            "L={} d={} d_q={} w={} M={} r={}",
            c.seq_len, c.embed_dim, c.qk_dim, c.segment_w, c.gsta_layers, c.ffn_ratio
        )?;
        write!(f, "{}{}{}", self.laser, self.self_attention, self.target_attention)?;
        writeln!(f, "sa/laser={:.3} laser/ta={:.3}", self.sa_over_laser, self.laser_over_ta)
    }
}
