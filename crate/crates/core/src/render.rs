//! Back-to-front source-over compositing of layer rasters.
//!
//! Layers are drawn deepest first (descending `order`), so order 0 ends up on
//! top. Each asset is fitted to its rounded bounding box, with bilinear
//! resampling when the sizes differ and a straight copy when they match.
//! Blending runs in `f64` on non-premultiplied RGBA and rounds half-up to
//! 8 bits once per layer, which keeps output identical across platforms.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::layout::{BlendMode, LayerRecord, LayoutDocument};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("no asset for layer {0}")]
    MissingAsset(String),
    #[error("layer {element_id} uses unsupported blend mode {mode:?}")]
    UnsupportedBlendMode { element_id: String, mode: String },
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BadBuffer { got: usize, expected: usize },
    #[error("image I/O for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, RenderError>;

/// Row-major RGBA8, non-premultiplied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 4;
        if pixels.len() != expected {
            return Err(RenderError::BadBuffer {
                got: pixels.len(),
                expected,
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn transparent(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        let pixels = rgba.repeat(width as usize * height as usize);
        Self { width, height, pixels }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        let i = (y as usize * self.width as usize + x as usize) * 4;
        [
            self.pixels[i],
            self.pixels[i + 1],
            self.pixels[i + 2],
            self.pixels[i + 3],
        ]
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| RenderError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgba = img.to_rgba8();
        let (width, height) = rgba.dimensions();
        Ok(Self {
            width,
            height,
            pixels: rgba.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgba8,
        )
        .map_err(|source| RenderError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Source-over of a non-premultiplied colour with effective alpha `sa` onto `dst`.
#[inline]
fn blend_pixel(dst: &mut [u8], src: [f64; 3], sa: f64) {
    if sa <= 0.0 {
        return;
    }
    let da = dst[3] as f64 / 255.0;
    let keep = da * (1.0 - sa);
    let out_a = sa + keep;
    if out_a <= 0.0 {
        dst.copy_from_slice(&[0, 0, 0, 0]);
        return;
    }
    for c in 0..3 {
        dst[c] = to_u8((src[c] * sa + dst[c] as f64 * keep) / out_a);
    }
    dst[3] = to_u8(out_a * 255.0);
}

/// Source sample position and weights for each destination index along one axis.
fn axis_taps(src_len: u32, dst_len: u32) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as usize - 1;
    (0..dst_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(last);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Integer placement of a layer: `(x, y, w, h)` with extents at least one pixel.
pub fn pixel_rect(layer: &LayerRecord) -> (i64, i64, u32, u32) {
    let b = &layer.bbox;
    let w = b.w.round().max(1.0) as u32;
    let h = b.h.round().max(1.0) as u32;
    (b.x.round() as i64, b.y.round() as i64, w, h)
}

fn draw_layer(canvas: &mut RasterImage, layer: &LayerRecord, asset: &RasterImage) {
    let opacity = layer.opacity as f64 / 255.0;
    if opacity == 0.0 || asset.width == 0 || asset.height == 0 {
        return;
    }
    let (ox, oy, tw, th) = pixel_rect(layer);
    let identity = asset.width == tw && asset.height == th;
    let xt = axis_taps(asset.width, tw);
    let yt = axis_taps(asset.height, th);

    let x_start = ox.max(0);
    let x_end = (ox + tw as i64).min(canvas.width as i64);
    let y_start = oy.max(0);
    let y_end = (oy + th as i64).min(canvas.height as i64);
    let cw = canvas.width as usize;

    for cy in y_start..y_end {
        let ty = (cy - oy) as usize;
        for cx in x_start..x_end {
            let tx = (cx - ox) as usize;
            let px = if identity {
                let p = asset.pixel(tx as u32, ty as u32);
                [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64]
            } else {
                let (x0, x1, fx) = xt[tx];
                let (y0, y1, fy) = yt[ty];
                let (a, b) = (asset.pixel(x0 as u32, y0 as u32), asset.pixel(x1 as u32, y0 as u32));
                let (c, d) = (asset.pixel(x0 as u32, y1 as u32), asset.pixel(x1 as u32, y1 as u32));
                let mut out = [0.0; 4];
                for k in 0..4 {
                    let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
                    let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
                    out[k] = top * (1.0 - fy) + bottom * fy;
                }
                out
            };
            let i = (cy as usize * cw + cx as usize) * 4;
            blend_pixel(
                &mut canvas.pixels[i..i + 4],
                [px[0], px[1], px[2]],
                opacity * px[3] / 255.0,
            );
        }
    }
}

/// Renders `doc` onto a transparent canvas of its rounded size.
pub fn composite(doc: &LayoutDocument, assets: &HashMap<String, RasterImage>) -> Result<RasterImage> {
    let mut layers: Vec<&LayerRecord> = doc.layers.iter().collect();
    for l in &layers {
        if let BlendMode::Other(mode) = &l.blend_mode {
            return Err(RenderError::UnsupportedBlendMode {
                element_id: l.element_id.clone(),
                mode: mode.clone(),
            });
        }
        if !assets.contains_key(&l.element_id) {
            return Err(RenderError::MissingAsset(l.element_id.clone()));
        }
    }
    layers.sort_by_key(|l| std::cmp::Reverse(l.order));

    let w = doc.canvas_w.round().max(1.0) as u32;
    let h = doc.canvas_h.round().max(1.0) as u32;
    let mut canvas = RasterImage::transparent(w, h);
    for layer in layers {
        draw_layer(&mut canvas, layer, &assets[&layer.element_id]);
    }
    Ok(canvas)
}

/// Where a layer's asset is expected under `dir`: its `asset_path` if
/// relative, otherwise that path's file name, and `{element_id}.png` when the
/// layer has no path.
pub fn asset_location(layer: &LayerRecord, dir: &Path) -> PathBuf {
    match &layer.asset_path {
        Some(p) => {
            let looks_absolute = p.starts_with('/') || p.starts_with('\\') || p.get(1..2) == Some(":");
            if looks_absolute {
                let name = p.rsplit(['/', '\\']).next().unwrap_or(p);
                dir.join(name)
            } else {
                dir.join(p)
            }
        }
        None => dir.join(format!("{}.png", layer.element_id)),
    }
}

/// Loads every layer's PNG asset from `dir`.
pub fn load_assets(doc: &LayoutDocument, dir: &Path) -> Result<HashMap<String, RasterImage>> {
    doc.layers
        .iter()
        .map(|l| {
            let path = asset_location(l, dir);
            if !path.exists() {
                return Err(RenderError::MissingAsset(l.element_id.clone()));
            }
            Ok((l.element_id.clone(), RasterImage::load_png(&path)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::layout::Category;

    fn layer(src: &str, b: (f64, f64, f64, f64), order: i64) -> LayerRecord {
        LayerRecord::new(src, Category::Image, BBox::new(b.0, b.1, b.2, b.3).unwrap(), order)
    }

    fn gradient(w: u32, h: u32) -> RasterImage {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend([
                    (x * 17 % 256) as u8,
                    (y * 31 % 256) as u8,
                    ((x + y) * 7 % 256) as u8,
                    255,
                ]);
            }
        }
        RasterImage::new(w, h, px).unwrap()
    }

    #[test]
    fn identity_copy() {
        let doc = LayoutDocument::new(6.0, 4.0, vec![layer("a", (0., 0., 6., 4.), 0)]).unwrap();
        let asset = gradient(6, 4);
        let out = composite(&doc, &HashMap::from([("a#0".to_string(), asset.clone())])).unwrap();
        assert_eq!(out, asset);
    }

    #[test]
    fn translucent_identity_copy() {
        let doc = LayoutDocument::new(3.0, 1.0, vec![layer("a", (0., 0., 3., 1.), 0)]).unwrap();
        let asset = RasterImage::new(3, 1, vec![37, 200, 3, 77, 1, 2, 3, 1, 250, 128, 0, 254]).unwrap();
        let out = composite(&doc, &HashMap::from([("a#0".to_string(), asset.clone())])).unwrap();
        assert_eq!(out, asset);
    }

    #[test]
    fn gray_over_white() {
        let doc = LayoutDocument::new(
            2.0,
            2.0,
            vec![
                layer("gray", (0., 0., 2., 2.), 0).with_opacity(128),
                layer("white", (0., 0., 2., 2.), 1),
            ],
        )
        .unwrap();
        let assets = HashMap::from([
            ("gray#0".to_string(), RasterImage::filled(2, 2, [128, 128, 128, 255])),
            ("white#1".to_string(), RasterImage::filled(2, 2, [255, 255, 255, 255])),
        ]);
        let out = composite(&doc, &assets).unwrap();
        let expect = (128.0 * (128.0 / 255.0) + 255.0 * (1.0 - 128.0 / 255.0) + 0.5_f64).floor() as u8;
        assert_eq!(expect, 191);
        assert_eq!(out, RasterImage::filled(2, 2, [191, 191, 191, 255]));
    }

    #[test]
    fn errors() {
        let mut doc = LayoutDocument::new(2.0, 2.0, vec![layer("a", (0., 0., 2., 2.), 0)]).unwrap();
        assert!(matches!(composite(&doc, &HashMap::new()), Err(RenderError::MissingAsset(id)) if id == "a#0"));
        doc.layers[0].blend_mode = BlendMode::Other("BlendMode.MULTIPLY".into());
        let assets = HashMap::from([("a#0".to_string(), RasterImage::filled(2, 2, [0, 0, 0, 255]))]);
        assert!(matches!(
            composite(&doc, &assets),
            Err(RenderError::UnsupportedBlendMode { .. })
        ));
        assert!(RasterImage::new(2, 2, vec![0; 15]).is_err());
    }

    #[test]
    fn upscaling_a_flat_color_stays_flat() {
        let doc = LayoutDocument::new(10.0, 10.0, vec![layer("a", (2., 3., 5., 4.), 0)]).unwrap();
        let assets = HashMap::from([("a#0".to_string(), RasterImage::filled(2, 2, [10, 20, 30, 255]))]);
        let out = composite(&doc, &assets).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let inside = (2..7).contains(&x) && (3..7).contains(&y);
                let want = if inside { [10, 20, 30, 255] } else { [0, 0, 0, 0] };
                assert_eq!(out.pixel(x, y), want, "({x}, {y})");
            }
        }
    }

    #[test]
    fn clipping_at_canvas_edges() {
        let doc = LayoutDocument::new(4.0, 4.0, vec![layer("a", (-2., 2., 4., 4.), 0)]).unwrap();
        let assets = HashMap::from([("a#0".to_string(), gradient(4, 4))]);
        let out = composite(&doc, &assets).unwrap();
        assert_eq!(out.pixel(0, 2), gradient(4, 4).pixel(2, 0));
        assert_eq!(out.pixel(2, 2), [0, 0, 0, 0]);
    }

    #[test]
    fn asset_paths_resolve_into_directory() {
        let dir = Path::new("/assets");
        let l = layer("a", (0., 0., 1., 1.), 0).with_asset("c:/desktop/merged/11575324_0_merged.png");
        assert_eq!(asset_location(&l, dir), dir.join("11575324_0_merged.png"));
        let l = layer("a", (0., 0., 1., 1.), 0).with_asset("sub/x.png");
        assert_eq!(asset_location(&l, dir), dir.join("sub/x.png"));
        let mut l = layer("a", (0., 0., 1., 1.), 0);
        l.element_id = "a#0".into();
        assert_eq!(asset_location(&l, dir), dir.join("a#0.png"));
    }
}
