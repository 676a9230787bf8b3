//! Domain types for multi-layer layouts and the strict JSON document codec.
//!
//! A [`LayoutDocument`] holds a canvas plus an ordered list of [`LayerRecord`]s,
//! each carrying a bounding box and an integer depth `order` (0 = frontmost).
//! Fields the math never reads (text metadata, group hierarchy, unknown keys)
//! are carried opaquely so that documents survive a parse/serialize cycle.

mod codec;
mod pairing;

pub use codec::{parse_document, parse_layers, parse_ocr_regions, serialize_document, DocumentError};
pub use pairing::{pair_layers, LayerPair, Pairing};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Category {
    Text,
    Image,
    SmartObject,
    Background,
    Shape,
    /// Any other tag, kept verbatim.
    Other(String),
}

impl Category {
    pub fn parse(tag: &str) -> Self {
        match tag {
            "type" | "text" => Self::Text,
            "pixel" | "image" => Self::Image,
            "smartobject" => Self::SmartObject,
            "background" => Self::Background,
            "shape" => Self::Shape,
            other => Self::Other(other.to_string()),
        }
    }

    /// Tag used in the on-disk format.
    pub fn as_tag(&self) -> &str {
        match self {
            Self::Text => "type",
            Self::Image => "pixel",
            Self::SmartObject => "smartobject",
            Self::Background => "background",
            Self::Shape => "shape",
            Self::Other(s) => s,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum BlendMode {
    #[default]
    Normal,
    Other(String),
}

impl BlendMode {
    pub fn parse(tag: &str) -> Self {
        match tag {
            "BlendMode.NORMAL" | "NORMAL" | "normal" => Self::Normal,
            other => Self::Other(other.to_string()),
        }
    }

    pub fn as_tag(&self) -> &str {
        match self {
            Self::Normal => "BlendMode.NORMAL",
            Self::Other(s) => s,
        }
    }
}

/// Counters from the dataset pipeline's `statistics` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeStats {
    pub original_layers: u64,
    pub valid_layers: u64,
    pub merged_groups: u64,
    pub excluded_layers: u64,
    pub out_of_bounds_layers: u64,
}

impl MergeStats {
    /// Checks `merged_groups <= valid_layers <= original_layers` and
    /// `original = valid + excluded + out_of_bounds`.
    pub fn check(&self) -> Result<(), &'static str> {
        if self.merged_groups > self.valid_layers {
            return Err("merged_groups exceeds valid_layers");
        }
        if self.valid_layers > self.original_layers {
            return Err("valid_layers exceeds original_layers");
        }
        let accounted = self
            .valid_layers
            .checked_add(self.excluded_layers)
            .and_then(|v| v.checked_add(self.out_of_bounds_layers));
        if accounted != Some(self.original_layers) {
            return Err("original_layers != valid_layers + excluded_layers + out_of_bounds_layers");
        }
        Ok(())
    }
}

/// A detected text or picture region. The file format stores corners; this
/// type stores `(x, y, w, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrRegion {
    pub bbox: BBox,
    pub category: String,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// `"{src}#{index}"`, where index is the layer's position in the document.
    pub element_id: String,
    pub src: String,
    pub category: Category,
    pub bbox: BBox,
    /// Depth index, 0 = frontmost.
    pub order: i64,
    pub blend_mode: BlendMode,
    pub opacity: u8,
    pub text_info: Option<Value>,
    pub group: Option<Value>,
    pub merged_names: Vec<String>,
    pub merged_indices: Vec<i64>,
    pub is_single_layer: bool,
    pub asset_path: Option<String>,
    /// Keys of the `files` object other than `layer`.
    pub files_extra: Map<String, Value>,
    pub ocr: Option<OcrRegion>,
    /// Unknown layer-level keys, preserved in file order.
    pub extra: Map<String, Value>,
}

impl LayerRecord {
    /// A bare layer with default blending and full opacity. `element_id` is
    /// filled in when the layer is placed in a document.
    pub fn new(src: impl Into<String>, category: Category, bbox: BBox, order: i64) -> Self {
        Self {
            element_id: String::new(),
            src: src.into(),
            category,
            bbox,
            order,
            blend_mode: BlendMode::Normal,
            opacity: 255,
            text_info: None,
            group: None,
            merged_names: Vec::new(),
            merged_indices: Vec::new(),
            is_single_layer: true,
            asset_path: None,
            files_extra: Map::new(),
            ocr: None,
            extra: Map::new(),
        }
    }

    pub fn with_asset(mut self, path: impl Into<String>) -> Self {
        self.asset_path = Some(path.into());
        self
    }

    pub fn with_opacity(mut self, opacity: u8) -> Self {
        self.opacity = opacity;
        self
    }
}

pub fn element_id(src: &str, index: usize) -> String {
    format!("{src}#{index}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDocument {
    pub psd_file: Option<String>,
    pub ocr_file: Option<String>,
    pub canvas_w: f64,
    pub canvas_h: f64,
    /// Unknown keys inside `canvas_size`.
    pub canvas_extra: Map<String, Value>,
    pub layers: Vec<LayerRecord>,
    pub stats: Option<MergeStats>,
    /// Unknown top-level keys, preserved in file order.
    pub extra: Map<String, Value>,
}

impl LayoutDocument {
    /// Builds a document, assigning element ids from layer positions and
    /// checking every invariant.
    pub fn new(canvas_w: f64, canvas_h: f64, layers: Vec<LayerRecord>) -> Result<Self, DocumentError> {
        let mut doc = Self {
            psd_file: None,
            ocr_file: None,
            canvas_w,
            canvas_h,
            canvas_extra: Map::new(),
            layers,
            stats: None,
            extra: Map::new(),
        };
        doc.reindex();
        doc.validate()?;
        Ok(doc)
    }

    /// Recomputes every `element_id` from the current layer positions.
    pub fn reindex(&mut self) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.element_id = element_id(&layer.src, i);
        }
    }

    pub fn canvas_box(&self) -> BBox {
        BBox {
            x: 0.0,
            y: 0.0,
            w: self.canvas_w,
            h: self.canvas_h,
        }
    }

    pub fn layer(&self, element_id: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.element_id == element_id)
    }

    /// Checks every document invariant; the error names the offending path.
    pub fn validate(&self) -> Result<(), DocumentError> {
        let canvas_ok = |v: f64| v.is_finite() && v > 0.0;
        if !canvas_ok(self.canvas_w) {
            return Err(DocumentError::schema("canvas_size.width", "must be a positive number"));
        }
        if !canvas_ok(self.canvas_h) {
            return Err(DocumentError::schema("canvas_size.height", "must be a positive number"));
        }
        let mut orders = HashSet::new();
        let mut ids = HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let path = format!("layers[{i}]");
            if let Err(e) = layer.bbox.validate() {
                return Err(DocumentError::schema(path, e.to_string()));
            }
            if !orders.insert(layer.order) {
                return Err(DocumentError::schema(
                    format!("{path}.order"),
                    format!("duplicate order {}", layer.order),
                ));
            }
            if !ids.insert(layer.element_id.as_str()) {
                return Err(DocumentError::schema(
                    format!("{path}.src"),
                    format!("duplicate element id {:?}", layer.element_id),
                ));
            }
            if layer.merged_names.len() != layer.merged_indices.len() {
                return Err(DocumentError::schema(
                    format!("{path}.merged_layers_indices"),
                    "length differs from merged_layers_names",
                ));
            }
        }
        if let Some(stats) = &self.stats {
            stats
                .check()
                .map_err(|reason| DocumentError::schema("statistics", reason))?;
        }
        Ok(())
    }
}
