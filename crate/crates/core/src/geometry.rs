//! Axis-aligned box arithmetic shared by the reward engine, the metrics and the
//! layer merger.
//!
//! Boxes are stored as `(x, y, w, h)` with a top-left origin, the same layout the
//! dataset uses. Corner form is derived on demand.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tie-breaking tolerance for edge-contact tests.
pub const TOUCH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box ({x}, {y}, {w}, {h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("enclosing box has zero diagonal")]
    DegenerateEnclosure,
}

/// Axis-aligned bounding box in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `[x1, y1, x2, y2]` corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let reason = if !(self.x.is_finite() && self.y.is_finite()) {
            Some("origin is not finite")
        } else if !(self.w.is_finite() && self.h.is_finite()) {
            Some("extent is not finite")
        } else if self.w <= 0.0 || self.h <= 0.0 {
            Some("width and height must be positive")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(GeometryError::InvalidBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                reason,
            }),
            None => Ok(()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    #[inline]
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x, self.y, self.right(), self.bottom()]
    }

    /// Intersection region, if the boxes share any area or boundary.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x.max(other.x);
        let y1 = self.y.max(other.y);
        let x2 = self.right().min(other.right());
        let y2 = self.bottom().min(other.bottom());
        if x2 < x1 || y2 < y1 {
            return None;
        }
        Some(BBox {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    /// Smallest box containing both inputs.
    pub fn union_hull(&self, other: &BBox) -> BBox {
        let x1 = self.x.min(other.x);
        let y1 = self.y.min(other.y);
        let x2 = self.right().max(other.right());
        let y2 = self.bottom().max(other.bottom());
        BBox {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x && self.y <= other.y && self.right() >= other.right() && self.bottom() >= other.bottom()
    }

    /// Same box with every coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x: self.x * s,
            y: self.y * s,
            w: self.w * s,
            h: self.h * s,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapReport {
    pub intersection_area: f64,
    pub union_area: f64,
    pub iou: f64,
}

pub fn overlap_report(a: &BBox, b: &BBox) -> OverlapReport {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    };
    OverlapReport {
        intersection_area: inter,
        union_area: union,
        iou,
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    overlap_report(a, b).iou
}

/// Distance-IoU: IoU minus squared center distance over the squared diagonal
/// of the smallest enclosing box.
pub fn diou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    let rho2 = (acx - bcx).powi(2) + (acy - bcy).powi(2);
    let hull = a.union_hull(b);
    let c2 = hull.w * hull.w + hull.h * hull.h;
    if c2 <= 0.0 {
        return Err(GeometryError::DegenerateEnclosure);
    }
    Ok(iou(a, b) - rho2 / c2)
}

/// `|ln((w/h) / (w_gt/h_gt))|`.
pub fn ar_log_penalty(pred: &BBox, gt: &BBox) -> f64 {
    // ln of each ratio separately keeps extreme ratios away from overflow
    (pred.aspect_ratio().ln() - gt.aspect_ratio().ln()).abs()
}

/// Huber smoothing with threshold `delta`: quadratic inside, linear outside.
pub fn huber_smooth(d: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0, "huber threshold must be positive");
    let a = d.abs();
    if a < delta {
        0.5 * d * d / delta
    } else {
        a - 0.5 * delta
    }
}

/// True iff the interiors share positive area. Edge and corner contact does not count.
pub fn boxes_overlap(a: &BBox, b: &BBox) -> bool {
    match a.intersection(b) {
        Some(i) => i.w > TOUCH_EPS && i.h > TOUCH_EPS,
        None => false,
    }
}
