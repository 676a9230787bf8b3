//! OCR-guided merging of over-segmented layers.
//!
//! Raw layers go through three filters in turn:
//!
//! 1. layers with less than `oob_fraction` of their area on the canvas are dropped as out of bounds;
//! 2. layers smaller than `min_area_fraction` of the canvas are dropped as insignificant;
//! 3. each survivor joins the OCR region holding the largest share of its area,
//!    provided that share is at least `contain_fraction`.
//!
//! Layers that share a region collapse into one record whose box is the union
//! of the members and whose order is the frontmost member's order. This module
//! only rewrites metadata. A merged record gets no `asset_path`; its raster is
//! produced elsewhere and listed in [`MergeOutcome::pending_assets`].

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::layout::{LayerRecord, LayoutDocument, MergeStats, OcrRegion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergePolicy {
    /// Minimum fraction of a layer's area inside an OCR region for it to join.
    pub contain_fraction: f64,
    /// Layers with less than this fraction of their area on the canvas are out of bounds.
    pub oob_fraction: f64,
    /// Layers smaller than this fraction of the canvas area are excluded.
    pub min_area_fraction: f64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            contain_fraction: 0.8,
            oob_fraction: 0.05,
            min_area_fraction: 0.0005,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("contain_fraction", self.contain_fraction),
            ("oob_fraction", self.oob_fraction),
            ("min_area_fraction", self.min_area_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub document: LayoutDocument,
    pub stats: MergeStats,
    /// Element ids of merged records that still need a composited asset.
    pub pending_assets: Vec<String>,
}

/// Indices into the original raw list that each layer stands for.
fn source_indices(layer: &LayerRecord, position: usize) -> Vec<i64> {
    if layer.merged_indices.is_empty() {
        vec![position as i64]
    } else {
        layer.merged_indices.clone()
    }
}

fn source_names(layer: &LayerRecord) -> Vec<String> {
    if layer.merged_names.is_empty() {
        vec![layer.src.clone()]
    } else {
        layer.merged_names.clone()
    }
}

/// Region with the largest contained fraction; ties go to the lower index.
fn best_region(bbox: &BBox, regions: &[OcrRegion], threshold: f64) -> Option<usize> {
    let area = bbox.area();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in regions.iter().enumerate() {
        let frac = bbox.intersection_area(&r.bbox) / area;
        if best.is_none_or(|(_, f)| frac > f) {
            best = Some((i, frac));
        }
    }
    best.filter(|&(_, f)| f >= threshold).map(|(i, _)| i)
}

/// Merges raw layers against OCR regions on a `canvas` of `(width, height)`.
pub fn merge_layers(raw: &[LayerRecord], ocr: &[OcrRegion], canvas: (f64, f64), policy: &MergePolicy) -> MergeOutcome {
    let canvas_box = BBox {
        x: 0.0,
        y: 0.0,
        w: canvas.0,
        h: canvas.1,
    };
    let canvas_area = canvas_box.area();

    let mut stats = MergeStats {
        original_layers: raw.len() as u64,
        ..Default::default()
    };
    let mut survivors: Vec<(usize, &LayerRecord)> = Vec::new();
    for (pos, layer) in raw.iter().enumerate() {
        let area = layer.bbox.area();
        let on_canvas = layer.bbox.intersection_area(&canvas_box) / area;
        if on_canvas < policy.oob_fraction {
            stats.out_of_bounds_layers += 1;
        } else if area / canvas_area < policy.min_area_fraction {
            stats.excluded_layers += 1;
        } else {
            survivors.push((pos, layer));
        }
    }
    stats.valid_layers = survivors.len() as u64;

    // group members per region, keeping unassigned layers on their own
    let mut groups: Vec<Vec<(usize, &LayerRecord)>> = Vec::new();
    let mut region_group: Vec<Option<usize>> = vec![None; ocr.len()];
    for &(pos, layer) in &survivors {
        match best_region(&layer.bbox, ocr, policy.contain_fraction) {
            Some(r) => match region_group[r] {
                Some(g) => groups[g].push((pos, layer)),
                None => {
                    region_group[r] = Some(groups.len());
                    groups.push(vec![(pos, layer)]);
                }
            },
            None => groups.push(vec![(pos, layer)]),
        }
    }

    let mut merged_flags = Vec::with_capacity(groups.len());
    let mut layers: Vec<LayerRecord> = groups
        .into_iter()
        .map(|members| {
            merged_flags.push(members.len() > 1);
            combine(members)
        })
        .collect();
    stats.merged_groups = layers.len() as u64;

    let mut order_idx: Vec<usize> = (0..layers.len()).collect();
    order_idx.sort_by_key(|&i| layers[i].order);
    let flags: Vec<bool> = order_idx.iter().map(|&i| merged_flags[i]).collect();
    let mut sorted: Vec<Option<LayerRecord>> = layers.drain(..).map(Some).collect();
    let layers: Vec<LayerRecord> = order_idx
        .iter()
        .map(|&i| sorted[i].take().expect("each index once"))
        .collect();

    let mut document = LayoutDocument {
        psd_file: None,
        ocr_file: None,
        canvas_w: canvas.0,
        canvas_h: canvas.1,
        canvas_extra: Default::default(),
        layers,
        stats: Some(stats),
        extra: Default::default(),
    };
    document.reindex();
    let pending_assets = document
        .layers
        .iter()
        .zip(flags)
        .filter(|(_, merged)| *merged)
        .map(|(l, _)| l.element_id.clone())
        .collect();
    MergeOutcome {
        document,
        stats,
        pending_assets,
    }
}

fn combine(mut members: Vec<(usize, &LayerRecord)>) -> LayerRecord {
    if members.len() == 1 {
        let (pos, layer) = members[0];
        let mut out = layer.clone();
        out.merged_indices = source_indices(layer, pos);
        out.merged_names = source_names(layer);
        out.is_single_layer = layer.is_single_layer && out.merged_names.len() <= 1;
        return out;
    }
    // members in original file order
    members.sort_by_key(|&(pos, l)| source_indices(l, pos)[0]);
    let front = members
        .iter()
        .min_by_key(|(_, l)| l.order)
        .map(|&(_, l)| l)
        .expect("non-empty group");
    let mut out = front.clone();
    out.bbox = members
        .iter()
        .skip(1)
        .fold(members[0].1.bbox, |acc, (_, l)| acc.union_hull(&l.bbox));
    let mut entries: Vec<(i64, String)> = members
        .iter()
        .flat_map(|&(pos, l)| source_indices(l, pos).into_iter().zip(source_names(l)))
        .collect();
    entries.sort_by_key(|(i, _)| *i);
    (out.merged_indices, out.merged_names) = entries.into_iter().unzip();
    out.is_single_layer = false;
    out.asset_path = None;
    out
}
