//! Geometric layout rewards and the aesthetic-feedback reward.
//!
//! Every component score lives on a 0..=10 scale:
//!
//! - spatial: mean DIoU over ground-truth layers, mapped from `[-1, 1]`
//! - aspect ratio: capped `|ln(ar / ar_gt)|` penalty, mean, mapped from `[-cap, 0]`
//! - size: capped Huber penalty on relative width/height error, mapped the same way
//! - format: 10 when the candidate parses as a valid document, else 0
//!
//! With the default weights the geometric total tops out at 30.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError};
use crate::layout::{pair_layers, parse_document, LayoutDocument, Pairing};

pub const SCORE_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("ground truth has no layers")]
    EmptyLayout,
    #[error("no aesthetic score for sample {0:?}")]
    MissingScore(String),
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, RewardError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda_size: f64,
    pub lambda_ar: f64,
    pub lambda_aes: f64,
    /// Huber threshold for the size penalty.
    pub delta: f64,
    /// Per-layer penalty cap for the size and aspect-ratio terms.
    pub cap: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_size: 0.6,
            lambda_ar: 0.4,
            lambda_aes: 2.0,
            delta: 1.0,
            cap: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_size", self.lambda_size),
            ("lambda_ar", self.lambda_ar),
            ("lambda_aes", self.lambda_aes),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RewardError::InvalidWeights(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
        }
        for (name, v) in [("delta", self.delta), ("cap", self.cap)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RewardError::InvalidWeights(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Largest attainable geometric total.
    pub fn vra_max(&self) -> f64 {
        SCORE_MAX * (2.0 + self.lambda_size + self.lambda_ar)
    }
}

/// What the format reward checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatCheck {
    /// JSON syntax plus the full document schema.
    #[default]
    Schema,
    /// Any JSON object passes.
    Syntax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub spatial: f64,
    pub size: f64,
    pub ar: f64,
    pub format: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aesthetic: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
}

impl RewardBreakdown {
    fn zero() -> Self {
        Self {
            spatial: 0.0,
            size: 0.0,
            ar: 0.0,
            format: 0.0,
            aesthetic: None,
            total: 0.0,
            diagnostics: Vec::new(),
        }
    }
}

fn ensure_nonempty(pairing: &Pairing<'_>) -> Result<()> {
    if pairing.pairs.is_empty() {
        Err(RewardError::EmptyLayout)
    } else {
        Ok(())
    }
}

/// Maps a mean negative penalty in `[-cap, 0]` onto `[0, 10]`.
fn penalty_score(mean_penalty: f64, cap: f64) -> f64 {
    ((-mean_penalty + cap) / cap) * SCORE_MAX
}

/// `((mean DIoU + 1) / 2) * 10`; a missing prediction counts as DIoU = -1.
pub fn spatial_reward(pairing: &Pairing<'_>) -> Result<f64> {
    ensure_nonempty(pairing)?;
    let mut sum = 0.0;
    for pair in &pairing.pairs {
        sum += match pair.pred {
            Some(p) => geometry::diou(&p.bbox, &pair.gt.bbox)?,
            None => -1.0,
        };
    }
    let mean = sum / pairing.pairs.len() as f64;
    Ok(diou_to_score(mean))
}

pub fn diou_to_score(mean_diou: f64) -> f64 {
    ((mean_diou + 1.0) / 2.0) * SCORE_MAX
}

pub fn ar_reward(pairing: &Pairing<'_>, weights: &RewardWeights) -> Result<f64> {
    ensure_nonempty(pairing)?;
    let cap = weights.cap;
    let total: f64 = pairing
        .pairs
        .iter()
        .map(|pair| match pair.pred {
            Some(p) => geometry::ar_log_penalty(&p.bbox, &pair.gt.bbox).min(cap),
            None => cap,
        })
        .sum();
    Ok(penalty_score(total / pairing.pairs.len() as f64, cap))
}

/// Capped per-layer penalty `huber(dw / w_gt) + huber(dh / h_gt)`.
pub fn size_penalty(pred: &crate::BBox, gt: &crate::BBox, weights: &RewardWeights) -> f64 {
    let dw = (pred.w - gt.w) / gt.w;
    let dh = (pred.h - gt.h) / gt.h;
    (geometry::huber_smooth(dw, weights.delta) + geometry::huber_smooth(dh, weights.delta)).min(weights.cap)
}

pub fn size_reward(pairing: &Pairing<'_>, weights: &RewardWeights) -> Result<f64> {
    ensure_nonempty(pairing)?;
    let total: f64 = pairing
        .pairs
        .iter()
        .map(|pair| match pair.pred {
            Some(p) => size_penalty(&p.bbox, &pair.gt.bbox, weights),
            None => weights.cap,
        })
        .sum();
    Ok(penalty_score(total / pairing.pairs.len() as f64, weights.cap))
}

/// 10 when the candidate is a valid layout document, else 0.
pub fn format_reward(candidate: &str) -> f64 {
    format_reward_with(candidate, FormatCheck::Schema)
}

pub fn format_reward_with(candidate: &str, check: FormatCheck) -> f64 {
    let ok = match check {
        FormatCheck::Schema => parse_document(candidate).is_ok(),
        FormatCheck::Syntax => matches!(
            serde_json::from_str::<serde_json::Value>(candidate),
            Ok(serde_json::Value::Object(_))
        ),
    };
    if ok {
        SCORE_MAX
    } else {
        0.0
    }
}

/// Component scores for an already-parsed prediction. `format` is set to 10.
pub fn score_document(pred: &LayoutDocument, gt: &LayoutDocument, weights: &RewardWeights) -> Result<RewardBreakdown> {
    weights.validate()?;
    let pairing = pair_layers(pred, gt);
    let spatial = spatial_reward(&pairing)?;
    let size = size_reward(&pairing, weights)?;
    let ar = ar_reward(&pairing, weights)?;
    let format = SCORE_MAX;
    let mut diagnostics = Vec::new();
    for pair in pairing.pairs.iter().filter(|p| p.pred.is_none()) {
        diagnostics.push(format!("missing prediction for {}", pair.gt.element_id));
    }
    for id in pairing.unmatched_ids() {
        diagnostics.push(format!("ignored unmatched prediction {id}"));
    }
    Ok(RewardBreakdown {
        spatial,
        size,
        ar,
        format,
        aesthetic: None,
        total: spatial + weights.lambda_size * size + weights.lambda_ar * ar + format,
        diagnostics,
    })
}

/// Total geometric reward for a candidate layout text against ground truth.
pub fn vra_total(pred_text: &str, gt: &LayoutDocument, weights: &RewardWeights) -> Result<RewardBreakdown> {
    vra_total_with(pred_text, gt, weights, FormatCheck::Schema)
}

pub fn vra_total_with(
    pred_text: &str,
    gt: &LayoutDocument,
    weights: &RewardWeights,
    check: FormatCheck,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    if gt.layers.is_empty() {
        return Err(RewardError::EmptyLayout);
    }
    match parse_document(pred_text) {
        Ok(pred) => score_document(&pred, gt, weights),
        Err(e) => {
            let mut out = RewardBreakdown::zero();
            out.format = format_reward_with(pred_text, check);
            out.total = out.format;
            out.diagnostics.push(format!("prediction rejected: {e}"));
            Ok(out)
        }
    }
}

/// `format_score + lambda_aes * aes_score`. The judge's scale passes through
/// unmodified; callers own its normalization.
pub fn rlaf_total(format_score: f64, aes_score: f64, weights: &RewardWeights) -> f64 {
    format_score + weights.lambda_aes * aes_score
}

/// Source of aesthetic scores keyed by sample id.
pub trait AestheticJudge: Send + Sync {
    fn score(&self, sample_id: &str) -> Result<f64>;
}

/// Returns the same score for every sample.
#[derive(Debug, Clone, Copy)]
pub struct ConstantJudge(pub f64);

impl AestheticJudge for ConstantJudge {
    fn score(&self, _sample_id: &str) -> Result<f64> {
        Ok(self.0)
    }
}

/// Lookup table loaded from a `{sample_id: score}` JSON map.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(transparent)]
pub struct ScoreTable {
    scores: HashMap<String, f64>,
}

impl ScoreTable {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn insert(&mut self, id: impl Into<String>, score: f64) {
        self.scores.insert(id.into(), score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl AestheticJudge for ScoreTable {
    fn score(&self, sample_id: &str) -> Result<f64> {
        self.scores
            .get(sample_id)
            .copied()
            .ok_or_else(|| RewardError::MissingScore(sample_id.to_string()))
    }
}

pub fn rlaf_breakdown(
    pred_text: &str,
    sample_id: &str,
    judge: &dyn AestheticJudge,
    weights: &RewardWeights,
    check: FormatCheck,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    let aes = judge.score(sample_id)?;
    let format = format_reward_with(pred_text, check);
    Ok(RewardBreakdown {
        format,
        aesthetic: Some(aes),
        total: rlaf_total(format, aes, weights),
        ..RewardBreakdown::zero()
    })
}
