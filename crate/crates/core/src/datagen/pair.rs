use rand::Rng;

use super::masks::{gen_mask_with_fraction, MaskGenParams};
use super::texture::ProceduralTexture;
use crate::error::{Error, Result};
use crate::field::{Image, Mask};
use crate::geometry::{affine_grid, bilinear_sample, AffineParams};
use crate::rng::{domain, SeedTree};

/// Inclusive per-component sampling ranges for a random affine transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaRange {
    /// Normalized translation ranges.
    pub tx: (f64, f64),
    pub ty: (f64, f64),
    pub rotation_deg: (f64, f64),
    /// Per-axis scale, sampled independently for x and y.
    pub scale: (f64, f64),
    pub shear: (f64, f64),
}

impl Default for ThetaRange {
    fn default() -> Self {
        Self {
            tx: (-0.25, 0.25),
            ty: (-0.25, 0.25),
            rotation_deg: (-15.0, 15.0),
            scale: (0.8, 1.25),
            shear: (-0.1, 0.1),
        }
    }
}

impl ThetaRange {
    /// Zero-width ranges at the identity.
    pub fn identity() -> Self {
        Self {
            tx: (0.0, 0.0),
            ty: (0.0, 0.0),
            rotation_deg: (0.0, 0.0),
            scale: (1.0, 1.0),
            shear: (0.0, 0.0),
        }
    }

    /// Pure translation by normalized `(tx, ty)`.
    pub fn fixed_translation(tx: f64, ty: f64) -> Self {
        Self {
            tx: (tx, tx),
            ty: (ty, ty),
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("tx", self.tx),
            ("ty", self.ty),
            ("rotation_deg", self.rotation_deg),
            ("scale", self.scale),
            ("shear", self.shear),
        ];
        for (name, (lo, hi)) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}]"
                )));
            }
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scale range [{}, {}]",
                self.scale.0, self.scale.1
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a transform uniformly from the per-component ranges.
pub fn sample_theta(range: &ThetaRange, rng: &mut impl Rng) -> Result<AffineParams> {
    range.validate()?;
    let rotation = uniform(rng, range.rotation_deg).to_radians();
    let sx = uniform(rng, range.scale);
    let sy = uniform(rng, range.scale);
    let shear = uniform(rng, range.shear);
    let tx = uniform(rng, range.tx);
    let ty = uniform(rng, range.ty);
    let theta = AffineParams::from_components(rotation, (sx, sy), shear, (tx, ty));
    theta.validate()?;
    Ok(theta)
}

/// A source image, its warped counterpart and the generating transform.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePair {
    pub a: Image,
    pub b: Image,
    /// Pixels of `b` whose sample fell inside `a`.
    pub b_valid: Mask,
    /// Maps `b` coordinates to `a` coordinates, so `b = warp(a, theta_star)`.
    pub theta_star: AffineParams,
}

pub fn gen_affine_pair(img: &Image, range: &ThetaRange, seed: u64) -> Result<AffinePair> {
    let mut rng = SeedTree::new(seed).stream(domain::AFFINE, 0);
    let theta_star = sample_theta(range, &mut rng)?;
    let grid = affine_grid(&theta_star, img.height(), img.width())?;
    let (b, b_valid) = bilinear_sample(img, &grid)?;
    Ok(AffinePair {
        a: img.clone(),
        b,
        b_valid,
        theta_star,
    })
}

/// An affine pair with irregular holes on both images.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPair {
    pub pair: AffinePair,
    pub mask_a: Mask,
    /// Hole mask of `b`, also covering pixels sampled outside `a`.
    pub mask_b: Mask,
}

/// Square procedural texture of side `size`, warped by a transform drawn
/// from `range`, with at most `max_hole` of each image drawn as hole.
/// Texture, transform and masks all derive from `seed`.
pub fn gen_masked_pair(
    size: usize,
    range: &ThetaRange,
    max_hole: f64,
    seed: u64,
) -> Result<MaskedPair> {
    let img = ProceduralTexture::new(seed, size as f64).render(size, size, 0.0, 0.0);
    let pair = gen_affine_pair(&img, range, seed)?;
    let mut seeds = SeedTree::new(seed).stream(domain::MASK, 3);
    let mut hole = || {
        let params = MaskGenParams {
            seed: seeds.random(),
            ..MaskGenParams::default()
        };
        gen_mask_with_fraction(size, size, &params, (0.0, max_hole))
    };
    let mask_a = hole()?;
    let mask_b = hole()?.and(&pair.b_valid);
    Ok(MaskedPair {
        pair,
        mask_a,
        mask_b,
    })
}
