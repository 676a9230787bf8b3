//! Local geometric uniformity of coordinate representations.
//!
//! A representation is anything that can report a distance between two
//! integer grid points. From the distances to the `+x`, `+y` and `+x+y`
//! neighbours of a point we recover a 2x2 metric tensor by polarization:
//!
//! ```text
//! G11 = d(p, p+ex)^2
//! G22 = d(p, p+ey)^2
//! G12 = (d(p, p+ex+ey)^2 - G11 - G22) / 2
//! ```
//!
//! Its determinant is exactly 1 on the Euclidean grid. Under the decimal
//! token representation every coordinate is written as a base-10 string and
//! steps cost their Levenshtein edit distance, so carries such as `99 -> 100`
//! produce spikes. The averaged representation box-filters the three distance
//! fields over a `k x k` window before the tensor is formed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("point ({0}, {1}) or one of its forward neighbours lies outside the domain")]
    OutOfDomain(i64, i64),
    #[error("domain {w}x{h} is smaller than 3x3")]
    DomainTooSmall { w: usize, h: usize },
    #[error("averaging window must be odd and positive, got {0}")]
    BadWindow(usize),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub type GridPoint = (i64, i64);

/// Distance between two grid points under some coordinate representation.
pub trait PointDistance: Sync {
    fn distance(&self, p: GridPoint, q: GridPoint) -> f64;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl PointDistance for Euclidean {
    fn distance(&self, p: GridPoint, q: GridPoint) -> f64 {
        let dx = (p.0 - q.0) as f64;
        let dy = (p.1 - q.1) as f64;
        (dx * dx + dy * dy).sqrt()
    }

    fn describe(&self) -> String {
        "euclidean".into()
    }
}

/// Each coordinate is tokenized separately as a base-10 string; per-axis
/// Levenshtein distances combine in quadrature.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecimalEditDistance;

impl DecimalEditDistance {
    pub fn axis(a: i64, b: i64) -> usize {
        strsim::levenshtein(&a.to_string(), &b.to_string())
    }
}

impl PointDistance for DecimalEditDistance {
    fn distance(&self, p: GridPoint, q: GridPoint) -> f64 {
        let lx = Self::axis(p.0, q.0) as f64;
        let ly = Self::axis(p.1, q.1) as f64;
        (lx * lx + ly * ly).sqrt()
    }

    fn describe(&self) -> String {
        "levenshtein distance between base-10 strings, per coordinate, combined in quadrature".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    Euclidean,
    TokenString,
    TokenStringAveraged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateRepresentation {
    pub kind: ReprKind,
    /// Side of the box filter; only read for the averaged kind.
    pub window: usize,
}

impl CoordinateRepresentation {
    pub const DEFAULT_WINDOW: usize = 5;

    pub fn euclidean() -> Self {
        Self {
            kind: ReprKind::Euclidean,
            window: 1,
        }
    }

    pub fn token_string() -> Self {
        Self {
            kind: ReprKind::TokenString,
            window: 1,
        }
    }

    pub fn token_averaged(window: usize) -> Self {
        Self {
            kind: ReprKind::TokenStringAveraged,
            window,
        }
    }

    /// Effective smoothing window (1 = none).
    fn effective_window(&self) -> Result<usize> {
        match self.kind {
            ReprKind::TokenStringAveraged => {
                if self.window == 0 || self.window.is_multiple_of(2) {
                    Err(TensorError::BadWindow(self.window))
                } else {
                    Ok(self.window)
                }
            }
            _ => Ok(1),
        }
    }

    fn distance(&self) -> &'static dyn PointDistance {
        match self.kind {
            ReprKind::Euclidean => &Euclidean,
            ReprKind::TokenString | ReprKind::TokenStringAveraged => &DecimalEditDistance,
        }
    }
}

/// Rectangle of `w x h` evaluation cells with origin `(x0, y0)`. Cell `p`
/// reads points up to `p + (1, 1)`, so the point extent is `(w + 1) x (h + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDomain {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
}

impl GridDomain {
    pub fn new(w: usize, h: usize) -> Self {
        Self { x0: 0, y0: 0, w, h }
    }

    pub fn contains_cell(&self, p: GridPoint) -> bool {
        p.0 >= self.x0 && p.1 >= self.y0 && p.0 < self.x0 + self.w as i64 && p.1 < self.y0 + self.h as i64
    }
}

pub type Metric2 = [[f64; 2]; 2];

pub fn det2(g: &Metric2) -> f64 {
    g[0][0] * g[1][1] - g[0][1] * g[1][0]
}

fn metric_from_distances(dx: f64, dy: f64, dxy: f64) -> Metric2 {
    let g11 = dx * dx;
    let g22 = dy * dy;
    let g12 = 0.5 * (dxy * dxy - g11 - g22);
    [[g11, g12], [g12, g22]]
}

fn raw_distances(dist: &dyn PointDistance, p: GridPoint) -> [f64; 3] {
    [
        dist.distance(p, (p.0 + 1, p.1)),
        dist.distance(p, (p.0, p.1 + 1)),
        dist.distance(p, (p.0 + 1, p.1 + 1)),
    ]
}

/// Metric tensor at cell `p` of `domain`.
pub fn local_metric(repr: &CoordinateRepresentation, domain: &GridDomain, p: GridPoint) -> Result<Metric2> {
    if !domain.contains_cell(p) {
        return Err(TensorError::OutOfDomain(p.0, p.1));
    }
    let k = repr.effective_window()?;
    let dist = repr.distance();
    let r = (k / 2) as i64;
    let (x_lo, x_hi) = ((p.0 - r).max(domain.x0), (p.0 + r).min(domain.x0 + domain.w as i64 - 1));
    let (y_lo, y_hi) = ((p.1 - r).max(domain.y0), (p.1 + r).min(domain.y0 + domain.h as i64 - 1));
    let mut acc = [0.0; 3];
    let mut n = 0.0;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d = raw_distances(dist, (x, y));
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
            n += 1.0;
        }
    }
    Ok(metric_from_distances(acc[0] / n, acc[1] / n, acc[2] / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetSummary {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl DetSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            variance,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetMetadata {
    pub representation: ReprKind,
    pub distance: String,
    pub window: usize,
    pub construction: String,
    pub smoothing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetMap {
    pub domain: GridDomain,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major, `grid_w * grid_h` values.
    pub values: Vec<f64>,
    pub summary: DetSummary,
    pub metadata: DetMetadata,
}

impl DetMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.grid_w + x]
    }

    /// Binary 8-bit PGM heat map, linearly scaled from `min` (black) to `max` (white).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut header = String::new();
        let _ = write!(header, "P5\n{} {}\n255\n", self.grid_w, self.grid_h);
        let mut out = header.into_bytes();
        let (lo, hi) = (self.summary.min, self.summary.max);
        let span = hi - lo;
        out.extend(self.values.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        }));
        out
    }
}

/// Separable box filter with the window truncated at the borders.
fn box_filter(field: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return field.to_vec();
    }
    let r = k / 2;
    let mut tmp = vec![0.0; field.len()];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            tmp[y * w + x] = row[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; field.len()];
    for x in 0..w {
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    out
}

pub fn det_map(repr: &CoordinateRepresentation, domain: &GridDomain) -> Result<DetMap> {
    let k = repr.effective_window()?;
    det_map_with(repr.kind, repr.distance(), k, domain)
}

/// Det map for an arbitrary distance. `window` must be odd; 1 disables smoothing.
pub fn det_map_with(kind: ReprKind, dist: &dyn PointDistance, window: usize, domain: &GridDomain) -> Result<DetMap> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(TensorError::BadWindow(window));
    }
    let (w, h) = (domain.w, domain.h);
    if w < 3 || h < 3 {
        return Err(TensorError::DomainTooSmall { w, h });
    }
    let mut fields = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for y in 0..h {
        for x in 0..w {
            let p = (domain.x0 + x as i64, domain.y0 + y as i64);
            let d = raw_distances(dist, p);
            for (f, v) in fields.iter_mut().zip(d) {
                f[y * w + x] = v;
            }
        }
    }
    let [dx, dy, dxy] = fields.map(|f| box_filter(&f, w, h, window));
    let values: Vec<f64> = (0..w * h)
        .map(|i| det2(&metric_from_distances(dx[i], dy[i], dxy[i])))
        .collect();
    Ok(DetMap {
        domain: *domain,
        grid_w: w,
        grid_h: h,
        summary: DetSummary::of(&values),
        values,
        metadata: DetMetadata {
            representation: kind,
            distance: dist.describe(),
            window,
            construction: "G11 = d(p,p+ex)^2, G22 = d(p,p+ey)^2, G12 = (d(p,p+ex+ey)^2 - G11 - G22)/2".into(),
            smoothing: if window > 1 {
                format!("{window}x{window} box average of the distance fields, truncated at domain borders")
            } else {
                "none".into()
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook dynamic-programming edit distance, independent of strsim.
    fn lev(a: &str, b: &str) -> usize {
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, ca) in a.chars().enumerate() {
            let mut cur = vec![i + 1];
            for (j, cb) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(ca != *cb);
                cur.push(sub.min(prev[j + 1] + 1).min(cur[j] + 1));
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn edit_distance_matches_oracle() {
        for (a, b) in [(99, 100), (10, 11), (9, 10), (199, 200), (0, 1), (1000, 999)] {
            assert_eq!(DecimalEditDistance::axis(a, b), lev(&a.to_string(), &b.to_string()));
        }
        assert_eq!(DecimalEditDistance::axis(99, 100), 3);
        assert_eq!(DecimalEditDistance::axis(10, 11), 1);
    }

    #[test]
    fn euclidean_metric_is_identity() {
        let d = GridDomain::new(100, 100);
        let g = local_metric(&CoordinateRepresentation::euclidean(), &d, (37, 80)).unwrap();
        for (got, want) in g.iter().flatten().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((det2(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn token_metric_examples() {
        let d = GridDomain::new(200, 200);
        let repr = CoordinateRepresentation::token_string();
        let g = local_metric(&repr, &d, (99, 10)).unwrap();
        assert_eq!(g[0][0], 9.0);
        assert_eq!(g[1][1], 1.0);
        let g = local_metric(&repr, &d, (10, 10)).unwrap();
        assert_eq!(g[0][0], 1.0);
    }

    #[test]
    fn out_of_domain_and_small_domains() {
        let d = GridDomain::new(10, 10);
        let repr = CoordinateRepresentation::euclidean();
        assert!(matches!(
            local_metric(&repr, &d, (10, 0)),
            Err(TensorError::OutOfDomain(10, 0))
        ));
        assert!(matches!(
            local_metric(&repr, &d, (-1, 0)),
            Err(TensorError::OutOfDomain(..))
        ));
        assert!(matches!(
            det_map(&repr, &GridDomain::new(2, 10)),
            Err(TensorError::DomainTooSmall { .. })
        ));
        assert!(matches!(
            det_map(&CoordinateRepresentation::token_averaged(4), &d),
            Err(TensorError::BadWindow(4))
        ));
    }

    #[test]
    fn euclidean_map_is_uniform() {
        let m = det_map(&CoordinateRepresentation::euclidean(), &GridDomain::new(100, 100)).unwrap();
        assert_eq!((m.grid_w, m.grid_h), (100, 100));
        assert!(m.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn window_one_matches_raw_tokens() {
        let d = GridDomain::new(60, 60);
        let raw = det_map(&CoordinateRepresentation::token_string(), &d).unwrap();
        let avg = det_map(&CoordinateRepresentation::token_averaged(1), &d).unwrap();
        assert_eq!(raw.values, avg.values);
    }

    #[test]
    fn map_agrees_with_pointwise_metric() {
        let d = GridDomain {
            x0: 90,
            y0: 5,
            w: 20,
            h: 12,
        };
        let repr = CoordinateRepresentation::token_averaged(3);
        let m = det_map(&repr, &d).unwrap();
        for (x, y) in [(0, 0), (9, 4), (10, 5), (19, 11)] {
            let g = local_metric(&repr, &d, (90 + x as i64, 5 + y as i64)).unwrap();
            assert!((m.at(x, y) - det2(&g)).abs() < 1e-9);
        }
    }

    #[test]
    fn averaging_lowers_variance() {
        let d = GridDomain::new(120, 120);
        let raw = det_map(&CoordinateRepresentation::token_string(), &d).unwrap();
        let avg = det_map(&CoordinateRepresentation::token_averaged(5), &d).unwrap();
        assert!(avg.summary.variance < raw.summary.variance);
    }

    #[test]
    fn pgm_header() {
        let m = det_map(&CoordinateRepresentation::token_string(), &GridDomain::new(4, 3)).unwrap();
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(pgm.len(), "P5\n4 3\n255\n".len() + 12);
    }
}
