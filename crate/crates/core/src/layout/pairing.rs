use std::collections::{HashMap, HashSet};

use super::{LayerRecord, LayoutDocument};

/// One ground-truth layer and its prediction, if the prediction has the same id.
#[derive(Debug, Clone, Copy)]
pub struct LayerPair<'a> {
    pub pred: Option<&'a LayerRecord>,
    pub gt: &'a LayerRecord,
}

#[derive(Debug, Clone)]
pub struct Pairing<'a> {
    /// One entry per ground-truth layer, in ground-truth order.
    pub pairs: Vec<LayerPair<'a>>,
    /// Predicted layers whose id does not occur in the ground truth.
    pub unmatched_pred: Vec<&'a LayerRecord>,
}

impl Pairing<'_> {
    pub fn missing_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.pred.is_none()).count()
    }

    pub fn unmatched_ids(&self) -> Vec<String> {
        self.unmatched_pred.iter().map(|l| l.element_id.clone()).collect()
    }
}

/// Matches predicted layers to ground-truth layers by `element_id`.
pub fn pair_layers<'a>(pred: &'a LayoutDocument, gt: &'a LayoutDocument) -> Pairing<'a> {
    let by_id: HashMap<&str, &LayerRecord> = pred.layers.iter().map(|l| (l.element_id.as_str(), l)).collect();
    let gt_ids: HashSet<&str> = gt.layers.iter().map(|l| l.element_id.as_str()).collect();
    let pairs = gt
        .layers
        .iter()
        .map(|g| LayerPair {
            pred: by_id.get(g.element_id.as_str()).copied(),
            gt: g,
        })
        .collect();
    let unmatched_pred = pred
        .layers
        .iter()
        .filter(|l| !gt_ids.contains(l.element_id.as_str()))
        .collect();
    Pairing { pairs, unmatched_pred }
}
