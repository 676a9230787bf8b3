use serde_json::{Map, Number, Value};
use thiserror::Error;

use super::{BlendMode, Category, LayerRecord, LayoutDocument, MergeStats, OcrRegion};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocumentError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedSyntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl DocumentError {
    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    fn syntax(e: serde_json::Error) -> Self {
        Self::MalformedSyntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, DocumentError>;

const DOC_KEYS: &[&str] = &["psd_file", "ocr_file", "canvas_size", "layers", "statistics"];
const LAYER_KEYS: &[&str] = &[
    "src",
    "category",
    "x",
    "y",
    "w",
    "h",
    "order",
    "blend_mode",
    "opacity",
    "text_info",
    "group",
    "merged_layers_names",
    "merged_layers_num",
    "merged_layers_indices",
    "is_single_layer",
    "files",
    "ocr_info",
];

/// Parses and validates a layout document.
///
/// Layer order in the result matches file order and element ids are
/// `"{src}#{index}"`. Unknown keys are kept in the `extra` maps.
pub fn parse_document(text: &str) -> Result<LayoutDocument> {
    let value: Value = serde_json::from_str(text).map_err(DocumentError::syntax)?;
    let root = as_object(&value, "$")?;

    let psd_file = opt_string(root, "psd_file", "psd_file")?;
    let ocr_file = opt_string(root, "ocr_file", "ocr_file")?;

    let canvas = root
        .get("canvas_size")
        .ok_or_else(|| DocumentError::schema("canvas_size", "missing"))?;
    let canvas = as_object(canvas, "canvas_size")?;
    let canvas_w = req_number(canvas, "width", "canvas_size.width")?;
    let canvas_h = req_number(canvas, "height", "canvas_size.height")?;
    let canvas_extra = unknown_keys(canvas, &["width", "height"]);

    let layers = match root.get("layers") {
        None => return Err(DocumentError::schema("layers", "missing")),
        Some(v) => layers_from_value(v, "layers")?,
    };

    let stats = match root.get("statistics") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_stats(v)?),
    };

    let doc = LayoutDocument {
        psd_file,
        ocr_file,
        canvas_w,
        canvas_h,
        canvas_extra,
        layers,
        stats,
        extra: unknown_keys(root, DOC_KEYS),
    };
    doc.validate()?;
    Ok(doc)
}

/// Parses a bare layer list, or the `layers` of a full document.
///
/// Only per-layer invariants are checked here; cross-layer rules such as order
/// uniqueness belong to the document.
pub fn parse_layers(text: &str) -> Result<Vec<LayerRecord>> {
    let value: Value = serde_json::from_str(text).map_err(DocumentError::syntax)?;
    match &value {
        Value::Object(obj) => match obj.get("layers") {
            Some(v) => layers_from_value(v, "layers"),
            None => Err(DocumentError::schema("layers", "missing")),
        },
        other => layers_from_value(other, "$"),
    }
}

/// Parses a JSON list of `{bbox: [x1, y1, x2, y2], category, text}` regions.
pub fn parse_ocr_regions(text: &str) -> Result<Vec<OcrRegion>> {
    let value: Value = serde_json::from_str(text).map_err(DocumentError::syntax)?;
    let items = value
        .as_array()
        .ok_or_else(|| DocumentError::schema("$", "expected an array of OCR regions"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| parse_ocr(v, &format!("[{i}]")))
        .collect()
}

fn layers_from_value(v: &Value, path: &str) -> Result<Vec<LayerRecord>> {
    let items = v
        .as_array()
        .ok_or_else(|| DocumentError::schema(path, "expected an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_layer(item, i, &format!("{path}[{i}]")))
        .collect()
}

fn parse_layer(v: &Value, index: usize, path: &str) -> Result<LayerRecord> {
    let obj = as_object(v, path)?;
    let at = |key: &str| format!("{path}.{key}");

    let src = req_string(obj, "src", &at("src"))?;
    let category = Category::parse(&req_string(obj, "category", &at("category"))?);
    let bbox = BBox {
        x: req_number(obj, "x", &at("x"))?,
        y: req_number(obj, "y", &at("y"))?,
        w: req_number(obj, "w", &at("w"))?,
        h: req_number(obj, "h", &at("h"))?,
    };
    if let Err(e) = bbox.validate() {
        return Err(DocumentError::schema(path, e.to_string()));
    }
    let order = req_integer(obj, "order", &at("order"))?;
    let blend_mode = match opt_string(obj, "blend_mode", &at("blend_mode"))? {
        Some(tag) => BlendMode::parse(&tag),
        None => BlendMode::Normal,
    };
    let opacity = match obj.get("opacity") {
        None => 255,
        Some(_) => {
            let o = req_integer(obj, "opacity", &at("opacity"))?;
            u8::try_from(o).map_err(|_| DocumentError::schema(at("opacity"), "must be within 0..=255"))?
        }
    };

    let merged_names = match obj.get("merged_layers_names") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| DocumentError::schema(at("merged_layers_names"), "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.as_str().map(str::to_string).ok_or_else(|| {
                    DocumentError::schema(format!("{path}.merged_layers_names[{i}]"), "expected a string")
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let merged_indices = match obj.get("merged_layers_indices") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| DocumentError::schema(at("merged_layers_indices"), "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, n)| integer(n, &format!("{path}.merged_layers_indices[{i}]")))
            .collect::<Result<Vec<_>>>()?,
    };
    if merged_names.len() != merged_indices.len() {
        return Err(DocumentError::schema(
            at("merged_layers_indices"),
            "length differs from merged_layers_names",
        ));
    }
    if obj.contains_key("merged_layers_num") {
        let n = req_integer(obj, "merged_layers_num", &at("merged_layers_num"))?;
        if n != merged_names.len() as i64 {
            return Err(DocumentError::schema(
                at("merged_layers_num"),
                format!("says {n} but {} names are listed", merged_names.len()),
            ));
        }
    }
    let is_single_layer = match obj.get("is_single_layer") {
        None => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(DocumentError::schema(at("is_single_layer"), "expected a boolean")),
    };

    let (asset_path, files_extra) = match obj.get("files") {
        None | Some(Value::Null) => (None, Map::new()),
        Some(v) => {
            let files = as_object(v, &at("files"))?;
            (
                opt_string(files, "layer", &at("files.layer"))?,
                unknown_keys(files, &["layer"]),
            )
        }
    };
    let ocr = match obj.get("ocr_info") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_ocr(v, &at("ocr_info"))?),
    };

    Ok(LayerRecord {
        element_id: super::element_id(&src, index),
        src,
        category,
        bbox,
        order,
        blend_mode,
        opacity,
        text_info: obj.get("text_info").cloned(),
        group: obj.get("group").cloned(),
        merged_names,
        merged_indices,
        is_single_layer,
        asset_path,
        files_extra,
        ocr,
        extra: unknown_keys(obj, LAYER_KEYS),
    })
}

fn parse_ocr(v: &Value, path: &str) -> Result<OcrRegion> {
    let obj = as_object(v, path)?;
    let bbox_path = format!("{path}.bbox");
    let corners = obj
        .get("bbox")
        .and_then(Value::as_array)
        .ok_or_else(|| DocumentError::schema(&bbox_path, "expected [x1, y1, x2, y2]"))?;
    if corners.len() != 4 {
        return Err(DocumentError::schema(&bbox_path, "expected exactly four numbers"));
    }
    let mut c = [0.0; 4];
    for (i, item) in corners.iter().enumerate() {
        c[i] = number(item, &format!("{bbox_path}[{i}]"))?;
    }
    let bbox =
        BBox::from_corners(c[0], c[1], c[2], c[3]).map_err(|e| DocumentError::schema(&bbox_path, e.to_string()))?;
    Ok(OcrRegion {
        bbox,
        category: req_string(obj, "category", &format!("{path}.category"))?,
        text: opt_string(obj, "text", &format!("{path}.text"))?,
    })
}

fn parse_stats(v: &Value) -> Result<MergeStats> {
    let obj = as_object(v, "statistics")?;
    let field = |key: &str| -> Result<u64> {
        let path = format!("statistics.{key}");
        let n = req_integer(obj, key, &path)?;
        u64::try_from(n).map_err(|_| DocumentError::schema(path, "must be non-negative"))
    };
    Ok(MergeStats {
        original_layers: field("original_layers")?,
        valid_layers: field("valid_layers")?,
        merged_groups: field("merged_groups")?,
        excluded_layers: field("excluded_layers")?,
        out_of_bounds_layers: field("out_of_bounds_layers")?,
    })
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| DocumentError::schema(path, "expected an object"))
}

fn unknown_keys(obj: &Map<String, Value>, known: &[&str]) -> Map<String, Value> {
    obj.iter()
        .filter(|(k, _)| !known.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn req_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String> {
    opt_string(obj, key, path)?.ok_or_else(|| DocumentError::schema(path, "missing"))
}

fn opt_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<String>> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(DocumentError::schema(path, "expected a string")),
    }
}

fn req_number(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    let v = obj.get(key).ok_or_else(|| DocumentError::schema(path, "missing"))?;
    number(v, path)
}

fn number(v: &Value, path: &str) -> Result<f64> {
    match v.as_f64() {
        Some(n) if n.is_finite() => Ok(n),
        _ => Err(DocumentError::schema(path, "expected a finite number")),
    }
}

fn req_integer(obj: &Map<String, Value>, key: &str, path: &str) -> Result<i64> {
    let v = obj.get(key).ok_or_else(|| DocumentError::schema(path, "missing"))?;
    integer(v, path)
}

/// Accepts JSON integers and integral floats such as `3.0`.
fn integer(v: &Value, path: &str) -> Result<i64> {
    if let Some(i) = v.as_i64() {
        return Ok(i);
    }
    match v.as_f64() {
        Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(f as i64),
        _ => Err(DocumentError::schema(path, "expected an integer")),
    }
}

/// Serializes a document to pretty-printed JSON with a fixed key order.
///
/// Integral coordinates are written without a fractional part.
pub fn serialize_document(doc: &LayoutDocument) -> String {
    let mut root = Map::new();
    if let Some(p) = &doc.psd_file {
        root.insert("psd_file".into(), Value::String(p.clone()));
    }
    if let Some(p) = &doc.ocr_file {
        root.insert("ocr_file".into(), Value::String(p.clone()));
    }
    let mut canvas = Map::new();
    canvas.insert("width".into(), coord(doc.canvas_w));
    canvas.insert("height".into(), coord(doc.canvas_h));
    extend(&mut canvas, &doc.canvas_extra);
    root.insert("canvas_size".into(), Value::Object(canvas));
    root.insert(
        "layers".into(),
        Value::Array(doc.layers.iter().map(layer_value).collect()),
    );
    if let Some(stats) = &doc.stats {
        root.insert(
            "statistics".into(),
            serde_json::to_value(stats).expect("stats serialize"),
        );
    }
    extend(&mut root, &doc.extra);
    serde_json::to_string_pretty(&Value::Object(root)).expect("value serialize")
}

fn layer_value(layer: &LayerRecord) -> Value {
    let mut m = Map::new();
    m.insert("src".into(), Value::String(layer.src.clone()));
    m.insert("category".into(), Value::String(layer.category.as_tag().into()));
    m.insert("x".into(), coord(layer.bbox.x));
    m.insert("y".into(), coord(layer.bbox.y));
    m.insert("w".into(), coord(layer.bbox.w));
    m.insert("h".into(), coord(layer.bbox.h));
    m.insert("order".into(), Value::from(layer.order));
    m.insert("blend_mode".into(), Value::String(layer.blend_mode.as_tag().into()));
    m.insert("opacity".into(), Value::from(layer.opacity));
    if let Some(t) = &layer.text_info {
        m.insert("text_info".into(), t.clone());
    }
    if let Some(g) = &layer.group {
        m.insert("group".into(), g.clone());
    }
    if !layer.merged_names.is_empty() || !layer.is_single_layer {
        m.insert("merged_layers_names".into(), Value::from(layer.merged_names.clone()));
        m.insert("merged_layers_num".into(), Value::from(layer.merged_names.len()));
        m.insert(
            "merged_layers_indices".into(),
            Value::from(layer.merged_indices.clone()),
        );
        m.insert("is_single_layer".into(), Value::Bool(layer.is_single_layer));
    }
    if layer.asset_path.is_some() || !layer.files_extra.is_empty() {
        let mut files = Map::new();
        if let Some(p) = &layer.asset_path {
            files.insert("layer".into(), Value::String(p.clone()));
        }
        extend(&mut files, &layer.files_extra);
        m.insert("files".into(), Value::Object(files));
    }
    if let Some(ocr) = &layer.ocr {
        m.insert("ocr_info".into(), ocr_value(ocr));
    }
    extend(&mut m, &layer.extra);
    Value::Object(m)
}

pub(crate) fn ocr_value(ocr: &OcrRegion) -> Value {
    let mut m = Map::new();
    m.insert(
        "bbox".into(),
        Value::Array(ocr.bbox.corners().iter().map(|&c| coord(c)).collect()),
    );
    m.insert("category".into(), Value::String(ocr.category.clone()));
    if let Some(t) = &ocr.text {
        m.insert("text".into(), Value::String(t.clone()));
    }
    Value::Object(m)
}

fn extend(dst: &mut Map<String, Value>, src: &Map<String, Value>) {
    for (k, v) in src {
        dst.insert(k.clone(), v.clone());
    }
}

/// Integral values within the exactly-representable range become JSON integers.
fn coord(v: f64) -> Value {
    const EXACT: f64 = 9_007_199_254_740_992.0;
    if v.fract() == 0.0 && v.abs() < EXACT {
        Value::from(v as i64)
    } else {
        Number::from_f64(v).map_or(Value::Null, Value::Number)
    }
}
