//! Seeded Gaussian perturbation of ground-truth layouts.
//!
//! Each variant adds independent `N(0, sigma^2)` noise to every layer's
//! `x`, `y`, `w` and `h`. Everything else in the document is copied verbatim.
//! Variant `i` draws from stream `i` of a ChaCha20 generator seeded with the
//! configured seed, so output depends only on `(document, config)`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::layout::{serialize_document, LayoutDocument};

/// Identity of the random source, for output metadata.
pub const GENERATOR: &str = "chacha20 (rand_chacha 0.9, stream = variant index) + rand_distr 0.5 Normal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clamp {
    None,
    /// Keep each origin on the canvas and floor extents at one pixel.
    #[default]
    Canvas,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Noise standard deviation in canvas pixels.
    pub sigma: f64,
    /// Number of variants.
    pub n: usize,
    pub seed: u64,
    pub clamp: Clamp,
    /// Round perturbed values to whole pixels.
    #[serde(default)]
    pub round: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            sigma: 2.5,
            n: 5,
            seed: 0,
            clamp: Clamp::Canvas,
            round: false,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(format!("sigma must be a non-negative number, got {}", self.sigma));
        }
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        Ok(())
    }
}

/// Mixes a base seed with a document digest, so documents sampled in parallel
/// get distinct but reproducible seeds.
pub fn derive_seed(seed: u64, doc: &LayoutDocument) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(serialize_document(doc).as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Draws `cfg.n` perturbed copies of `gt`.
///
/// With [`Clamp::None`] a large draw can push a width or height to zero or
/// below; such variants are returned as-is and will not pass validation.
///
/// # Panics
///
/// If `cfg.sigma` is negative or not finite.
pub fn sample_perturbations(gt: &LayoutDocument, cfg: &PerturbationConfig) -> Vec<LayoutDocument> {
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma must be finite and non-negative");
    (0..cfg.n)
        .map(|variant| {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(variant as u64);
            let mut doc = gt.clone();
            for layer in &mut doc.layers {
                let b = &mut layer.bbox;
                let mut vals = [b.x, b.y, b.w, b.h];
                for v in &mut vals {
                    *v += noise.sample(&mut rng);
                    if cfg.round {
                        *v = v.round();
                    }
                }
                if cfg.clamp == Clamp::Canvas {
                    vals[0] = vals[0].clamp(0.0, (gt.canvas_w - 1.0).max(0.0));
                    vals[1] = vals[1].clamp(0.0, (gt.canvas_h - 1.0).max(0.0));
                    vals[2] = vals[2].max(1.0);
                    vals[3] = vals[3].max(1.0);
                }
                [b.x, b.y, b.w, b.h] = vals;
            }
            doc
        })
        .collect()
}
