//! Layout evaluation metrics: mean IoU, inverse order pair ratio (IOPR) and
//! aspect ratio distortion (ARD).
//!
//! All three compare a predicted document to its ground truth layer by layer,
//! pairing on `element_id`. Corpus figures are unweighted means of
//! per-document values.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{boxes_overlap, iou, BBox};
use crate::layout::{pair_layers, LayoutDocument, Pairing};

/// Per-layer ARD when the prediction is missing: the supremum of the term.
pub const ARD_MAX: f64 = FRAC_PI_2 * FRAC_PI_2;

/// Which boxes the IOPR overlap predicate reads.
pub const IOPR_OVERLAP_BASIS: &str = "ground_truth";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ground truth needs at least {needed} layer(s), has {got}")]
    EmptyLayout { needed: usize, got: usize },
    #[error("no predicted order for {0}")]
    MissingOrder(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn require_layers(gt: &LayoutDocument, needed: usize) -> Result<()> {
    if gt.layers.len() < needed {
        return Err(MetricError::EmptyLayout {
            needed,
            got: gt.layers.len(),
        });
    }
    Ok(())
}

/// Mean of per-layer IoU over ground-truth layers; a missing prediction counts 0.
pub fn mean_iou(pred: &LayoutDocument, gt: &LayoutDocument) -> Result<f64> {
    require_layers(gt, 1)?;
    Ok(mean_iou_of(&pair_layers(pred, gt)))
}

fn mean_iou_of(pairing: &Pairing<'_>) -> f64 {
    let sum: f64 = pairing
        .pairs
        .iter()
        .map(|p| p.pred.map_or(0.0, |l| iou(&l.bbox, &p.gt.bbox)))
        .sum();
    sum / pairing.pairs.len() as f64
}

/// `(arctan(w_gt / h_gt) - arctan(w / h))^2`.
pub fn ard_term(pred: &BBox, gt: &BBox) -> f64 {
    (gt.w.atan2(gt.h) - pred.w.atan2(pred.h)).powi(2)
}

pub fn ard(pred: &LayoutDocument, gt: &LayoutDocument) -> Result<f64> {
    require_layers(gt, 1)?;
    Ok(ard_of(&pair_layers(pred, gt)))
}

fn ard_of(pairing: &Pairing<'_>) -> f64 {
    let sum: f64 = pairing
        .pairs
        .iter()
        .map(|p| p.pred.map_or(ARD_MAX, |l| ard_term(&l.bbox, &p.gt.bbox)))
        .sum();
    sum / pairing.pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iopr {
    pub ratio: f64,
    pub percent: f64,
    pub inverted_pairs: u64,
    pub total_pairs: u64,
}

/// Fraction of ground-truth layer pairs that overlap (on ground-truth boxes)
/// and whose predicted depth order is inverted.
///
/// Layers are indexed by ascending ground-truth order; the pair `(i, j)` with
/// `i < j` is inverted when the predicted order of `j` is smaller than that of
/// `i`. The denominator is every pair, `n (n - 1) / 2`.
pub fn iopr(pred: &LayoutDocument, gt: &LayoutDocument) -> Result<Iopr> {
    require_layers(gt, 2)?;
    let pairing = pair_layers(pred, gt);
    let mut seq: Vec<(i64, i64, BBox)> = Vec::with_capacity(pairing.pairs.len());
    for p in &pairing.pairs {
        let pred_order = p
            .pred
            .map(|l| l.order)
            .ok_or_else(|| MetricError::MissingOrder(p.gt.element_id.clone()))?;
        seq.push((p.gt.order, pred_order, p.gt.bbox));
    }
    seq.sort_by_key(|&(gt_order, _, _)| gt_order);

    let n = seq.len();
    let mut inverted = 0u64;
    for i in 0..n {
        let (_, oi, bi) = seq[i];
        for &(_, oj, bj) in &seq[i + 1..] {
            if oj < oi && boxes_overlap(&bi, &bj) {
                inverted += 1;
            }
        }
    }
    let total = (n * (n - 1) / 2) as u64;
    let ratio = inverted as f64 / total as f64;
    Ok(Iopr {
        ratio,
        percent: 100.0 * ratio,
        inverted_pairs: inverted,
        total_pairs: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricRow {
    pub element_id: String,
    pub iou: f64,
    pub ard: f64,
    pub gt_order: i64,
    pub pred_order: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean_iou: f64,
    /// `None` when the ground truth has fewer than two layers or a prediction is missing.
    pub iopr_ratio: Option<f64>,
    pub iopr_percent: Option<f64>,
    pub ard: f64,
    pub iopr_overlap_basis: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer: Option<Vec<LayerMetricRow>>,
}

/// All three metrics for one document.
pub fn evaluate(pred: &LayoutDocument, gt: &LayoutDocument, with_rows: bool) -> Result<MetricReport> {
    require_layers(gt, 1)?;
    let pairing = pair_layers(pred, gt);
    let mut notes = Vec::new();
    let (iopr_ratio, iopr_percent) = match iopr(pred, gt) {
        Ok(v) => (Some(v.ratio), Some(v.percent)),
        Err(e) => {
            notes.push(format!("iopr undefined: {e}"));
            (None, None)
        }
    };
    if !pairing.unmatched_pred.is_empty() {
        notes.push(format!(
            "ignored unmatched predictions: {}",
            pairing.unmatched_ids().join(", ")
        ));
    }
    let per_layer = with_rows.then(|| {
        pairing
            .pairs
            .iter()
            .map(|p| LayerMetricRow {
                element_id: p.gt.element_id.clone(),
                iou: p.pred.map_or(0.0, |l| iou(&l.bbox, &p.gt.bbox)),
                ard: p.pred.map_or(ARD_MAX, |l| ard_term(&l.bbox, &p.gt.bbox)),
                gt_order: p.gt.order,
                pred_order: p.pred.map(|l| l.order),
            })
            .collect()
    });
    Ok(MetricReport {
        mean_iou: mean_iou_of(&pairing),
        iopr_ratio,
        iopr_percent,
        ard: ard_of(&pairing),
        iopr_overlap_basis: IOPR_OVERLAP_BASIS.to_string(),
        notes,
        per_layer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub documents: usize,
    pub mean_iou: f64,
    /// Averaged over documents where IOPR is defined.
    pub iopr_ratio: Option<f64>,
    pub iopr_percent: Option<f64>,
    pub iopr_documents: usize,
    pub ard: f64,
}

/// Unweighted per-document means. Returns `None` for an empty corpus.
pub fn summarize<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<CorpusSummary> {
    let (mut n, mut iou_sum, mut ard_sum, mut iopr_sum, mut iopr_n) = (0usize, 0.0, 0.0, 0.0, 0usize);
    for r in reports {
        n += 1;
        iou_sum += r.mean_iou;
        ard_sum += r.ard;
        if let Some(v) = r.iopr_ratio {
            iopr_sum += v;
            iopr_n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let iopr_ratio = (iopr_n > 0).then(|| iopr_sum / iopr_n as f64);
    Some(CorpusSummary {
        documents: n,
        mean_iou: iou_sum / n as f64,
        iopr_ratio,
        iopr_percent: iopr_ratio.map(|r| 100.0 * r),
        iopr_documents: iopr_n,
        ard: ard_sum / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Category, LayerRecord};

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn doc(layers: &[(BBox, i64)]) -> LayoutDocument {
        let layers = layers
            .iter()
            .enumerate()
            .map(|(i, (bb, o))| LayerRecord::new(format!("e{i}"), Category::Image, *bb, *o))
            .collect();
        LayoutDocument::new(1000.0, 1000.0, layers).unwrap()
    }

    #[test]
    fn identical_documents() {
        let d = doc(&[
            (b(0., 0., 10., 10.), 0),
            (b(5., 5., 10., 20.), 1),
            (b(100., 0., 3., 7.), 2),
        ]);
        assert_eq!(mean_iou(&d, &d).unwrap(), 1.0);
        assert_eq!(ard(&d, &d).unwrap(), 0.0);
        assert_eq!(iopr(&d, &d).unwrap().ratio, 0.0);
    }

    #[test]
    fn mean_iou_examples() {
        let gt = doc(&[(b(0., 0., 10., 10.), 0), (b(0., 0., 10., 10.), 1)]);
        let far = doc(&[(b(50., 50., 10., 10.), 0), (b(80., 80., 10., 10.), 1)]);
        assert_eq!(mean_iou(&far, &gt).unwrap(), 0.0);
        let half = doc(&[(b(0., 0., 10., 10.), 0), (b(5., 0., 10., 10.), 1)]);
        let v = mean_iou(&half, &gt).unwrap();
        assert!((v - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((v - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn iopr_examples() {
        let gt = doc(&[(b(0., 0., 10., 10.), 0), (b(5., 5., 10., 10.), 1)]);
        let swapped = doc(&[(b(0., 0., 10., 10.), 1), (b(5., 5., 10., 10.), 0)]);
        let v = iopr(&swapped, &gt).unwrap();
        assert_eq!(
            (v.ratio, v.percent, v.inverted_pairs, v.total_pairs),
            (1.0, 100.0, 1, 1)
        );

        let gt = doc(&[(b(0., 0., 10., 10.), 0), (b(50., 50., 10., 10.), 1)]);
        let swapped = doc(&[(b(0., 0., 10., 10.), 1), (b(50., 50., 10., 10.), 0)]);
        assert_eq!(iopr(&swapped, &gt).unwrap().ratio, 0.0);
    }

    #[test]
    fn iopr_errors() {
        let one = doc(&[(b(0., 0., 10., 10.), 0)]);
        assert!(matches!(iopr(&one, &one), Err(MetricError::EmptyLayout { .. })));
        let gt = doc(&[(b(0., 0., 10., 10.), 0), (b(5., 5., 10., 10.), 1)]);
        assert!(matches!(iopr(&one, &gt), Err(MetricError::MissingOrder(id)) if id == "e1#1"));
    }

    #[test]
    fn ard_examples() {
        let gt = doc(&[(b(0., 0., 10., 10.), 0)]);
        let wide = doc(&[(b(0., 0., 20., 10.), 0)]);
        let v = ard(&wide, &gt).unwrap();
        assert!((v - (1f64.atan() - 2f64.atan()).powi(2)).abs() < 1e-15);
        assert!((v - 0.103_523_419).abs() < 1e-9);

        let tall_gt = doc(&[(b(0., 0., 1e9, 1.), 0)]);
        let flat = doc(&[(b(0., 0., 1., 1e9), 0)]);
        assert!((ard(&flat, &tall_gt).unwrap() - ARD_MAX).abs() < 1e-8);
        assert!((ARD_MAX - 2.467401).abs() < 1e-6);
    }

    #[test]
    fn report_and_summary() {
        let gt = doc(&[(b(0., 0., 10., 10.), 0), (b(5., 5., 10., 10.), 1)]);
        let pred = doc(&[(b(0., 0., 10., 10.), 1), (b(5., 5., 10., 10.), 0)]);
        let r = evaluate(&pred, &gt, true).unwrap();
        assert_eq!(r.iopr_percent, Some(100.0));
        assert_eq!(r.per_layer.as_ref().unwrap().len(), 2);

        let one = doc(&[(b(0., 0., 10., 10.), 0)]);
        let r1 = evaluate(&one, &one, false).unwrap();
        assert_eq!(r1.iopr_ratio, None);
        assert!(!r1.notes.is_empty());

        let s = summarize([&r, &r1]).unwrap();
        assert_eq!(s.documents, 2);
        assert_eq!(s.iopr_documents, 1);
        assert_eq!(s.iopr_ratio, Some(1.0));
        assert_eq!(s.mean_iou, 1.0);
        assert!(summarize([]).is_none());
    }
}
