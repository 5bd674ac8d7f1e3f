//! Reference-to-target affine estimation from the normalized correlation
//! volume, and the grid-distance quality measure used to score it.
//!
//! The chain is: soft-argmax correspondences per target cell, a RANSAC
//! consensus fit, then Levenberg-damped Gauss-Newton refinement on an image
//! pyramid that ends at full resolution.

mod lsq;
mod photometric;
mod ransac;

pub use lsq::{fit_affine_wlsq, MAX_CONDITION};
pub use photometric::{
    masked_residual, normal_equations, overlap_mask, refine_affine_photometric, NormalEquations,
    PhotometricFit, MIN_OVERLAP,
};
pub use ransac::{fit_affine_ransac, RansacFit, DEFAULT_INLIER_THRESHOLD, DEFAULT_ITERS};

use crate::correspondence::{
    masked_correlation, normalize_channels, softmax_normalize, NormalizedCorrelation,
};
use crate::error::{Error, Result};
use crate::field::{FeatureMap, Image, Mask};
use crate::geometry::{affine_grid, normalize, AffineParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Normalized reference coordinate.
    pub ref_point: [f64; 2],
    /// Normalized target coordinate.
    pub tgt_point: [f64; 2],
    pub confidence: f64,
}

pub type CorrespondenceSet = Vec<Correspondence>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub theta: AffineParams,
    pub rms: f64,
}

/// Expected reference position (soft-argmax) for every valid target column.
/// Confidence is the column's peak weight; columns below `min_confidence`
/// are dropped.
pub fn soft_argmax_correspondences(
    cnorm: &NormalizedCorrelation,
    min_confidence: f64,
) -> CorrespondenceSet {
    let w = &cnorm.weights;
    let (rh, rw) = w.ref_shape();
    let (th, tw) = w.tgt_shape();
    let ref_coords: Vec<[f64; 2]> = (0..rh * rw)
        .map(|i| [normalize(i % rw, rw), normalize(i / rw, rh)])
        .collect();
    let mut acc = vec![[0.0f64; 3]; th * tw];
    // Row-major traversal keeps memory access sequential.
    for (i, rc) in ref_coords.iter().enumerate() {
        for (j, (a, &v)) in acc.iter_mut().zip(w.row(i)).enumerate() {
            if v != 0.0 && cnorm.column_valid[j] {
                a[0] += v * rc[0];
                a[1] += v * rc[1];
                a[2] = a[2].max(v);
            }
        }
    }
    (0..th * tw)
        .filter(|&j| cnorm.column_valid[j] && acc[j][2] >= min_confidence)
        .map(|j| Correspondence {
            ref_point: [acc[j][0], acc[j][1]],
            tgt_point: [normalize(j % tw, tw), normalize(j / tw, th)],
            confidence: acc[j][2],
        })
        .collect()
}

/// Mean L2 distance between the two sampling grids over all `h*w` cells, and
/// the L1 distance between the parameter vectors.
pub fn grid_loss(
    theta: &AffineParams,
    theta_star: &AffineParams,
    h: usize,
    w: usize,
) -> (f64, f64) {
    let param_term = theta
        .0
        .iter()
        .zip(theta_star.0.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let (Ok(ga), Ok(gb)) = (affine_grid(theta, h, w), affine_grid(theta_star, h, w)) else {
        return (f64::INFINITY, param_term);
    };
    let n = ga.coords().len() as f64;
    let grid_term = ga
        .coords()
        .iter()
        .zip(gb.coords())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    (grid_term, param_term)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub correlation_temperature: f64,
    pub min_confidence: f64,
    pub ransac_iters: usize,
    pub ransac_threshold: f64,
    pub gn_max_iters: usize,
    pub gn_tol: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            correlation_temperature: 0.02,
            min_confidence: 0.05,
            ransac_iters: DEFAULT_ITERS,
            ransac_threshold: DEFAULT_INLIER_THRESHOLD,
            gn_max_iters: 50,
            gn_tol: 1e-7,
            seed: 0,
        }
    }
}

/// One side of an alignment problem: raw features, their validity, and the
/// full-resolution frame with its validity.
#[derive(Debug, Clone, Copy)]
pub struct AlignInput<'a> {
    pub features: &'a FeatureMap,
    pub feature_mask: &'a Mask,
    pub image: &'a Image,
    pub mask: &'a Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    pub theta: AffineParams,
    /// Consensus estimate before photometric refinement.
    pub coarse_theta: AffineParams,
    pub correspondences: usize,
    pub inliers: usize,
    /// Final mean squared photometric residual at full resolution.
    pub residual: f64,
}

/// Estimates the affine map taking target coordinates to reference
/// coordinates.
pub fn align_pair(
    reference: AlignInput<'_>,
    target: AlignInput<'_>,
    cfg: &AlignConfig,
) -> Result<AlignOutcome> {
    let fr = normalize_channels(reference.features);
    let ft = normalize_channels(target.features);
    let corr = masked_correlation(&fr, reference.feature_mask, &ft, target.feature_mask)?;
    let mut cnorm = softmax_normalize(&corr, reference.feature_mask, cfg.correlation_temperature)?;
    cnorm.restrict_columns(target.feature_mask);
    let matches = soft_argmax_correspondences(&cnorm, cfg.min_confidence);
    if matches.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{} confident correspondences, need at least 3",
            matches.len()
        )));
    }
    let consensus = fit_affine_ransac(&matches, cfg.ransac_iters, cfg.ransac_threshold, cfg.seed)?;
    consensus.theta.validate()?;

    let (h, w) = (target.image.height(), target.image.width());
    let mut theta = consensus.theta;
    let mut residual = f64::INFINITY;
    for (lh, lw) in pyramid_sizes(reference.features.height(), h, w) {
        let (ri, rm, ti, tm) = if (lh, lw) == (h, w) {
            (
                reference.image.clone(),
                reference.mask.clone(),
                target.image.clone(),
                target.mask.clone(),
            )
        } else {
            (
                reference.image.area_downsample(lh, lw),
                reference.mask.min_downsample(lh, lw),
                target.image.area_downsample(lh, lw),
                target.mask.min_downsample(lh, lw),
            )
        };
        match refine_affine_photometric(&theta, &ri, &rm, &ti, &tm, cfg.gn_max_iters, cfg.gn_tol) {
            Ok(fit) => {
                theta = fit.theta;
                residual = fit.residual;
            }
            // Coarse levels can lose the overlap that finer ones still have.
            Err(Error::InsufficientOverlap { .. }) if (lh, lw) != (h, w) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(AlignOutcome {
        theta,
        coarse_theta: consensus.theta,
        correspondences: matches.len(),
        inliers: consensus.inlier_count(),
        residual,
    })
}

/// Square-ish pyramid from the feature resolution up to `h x w`.
fn pyramid_sizes(start: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut sizes = Vec::new();
    let longest = h.max(w);
    let mut s = start.max(2);
    while s < longest {
        let lh = (h * s / longest).max(2);
        let lw = (w * s / longest).max(2);
        sizes.push((lh, lw));
        s *= 2;
    }
    sizes.push((h, w));
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::CorrelationMap;

    #[test]
    fn permutation_columns_give_exact_pairs() {
        // Reference row i matched to target column (i + 1) % 4 on a 2x2 grid.
        let mut c = CorrelationMap::zeros((2, 2), (2, 2));
        for i in 0..4 {
            c.set(i, (i + 1) % 4, 1.0);
        }
        let n = NormalizedCorrelation {
            weights: c,
            column_valid: vec![true; 4],
        };
        let corr = soft_argmax_correspondences(&n, 0.5);
        assert_eq!(corr.len(), 4);
        for k in corr {
            assert_eq!(k.confidence, 1.0);
            let j = (0..4)
                .find(|&j| [normalize(j % 2, 2), normalize(j / 2, 2)] == k.tgt_point)
                .unwrap();
            let i = (j + 3) % 4;
            assert_eq!(k.ref_point, [normalize(i % 2, 2), normalize(i / 2, 2)]);
        }
    }

    #[test]
    fn uniform_column_gives_centroid() {
        let mut c = CorrelationMap::zeros((3, 3), (1, 2));
        for i in [0usize, 2, 4, 8] {
            c.set(i, 0, 0.25);
        }
        let n = NormalizedCorrelation {
            weights: c,
            column_valid: vec![true, false],
        };
        let corr = soft_argmax_correspondences(&n, 0.0);
        assert_eq!(corr.len(), 1);
        let xs = [-1.0, 1.0, 0.0, 1.0];
        let ys = [-1.0, -1.0, 0.0, 1.0];
        let cx = xs.iter().sum::<f64>() / 4.0;
        let cy = ys.iter().sum::<f64>() / 4.0;
        assert!((corr[0].ref_point[0] - cx).abs() < 1e-15);
        assert!((corr[0].ref_point[1] - cy).abs() < 1e-15);
        assert_eq!(corr[0].confidence, 0.25);
        assert!(soft_argmax_correspondences(&n, 0.3).is_empty());
    }

    #[test]
    fn grid_loss_closed_forms() {
        let t = AffineParams([1.2, 0.1, -0.1, 0.0, 0.8, 0.3]);
        assert_eq!(grid_loss(&t, &t, 8, 8), (0.0, 0.0));
        let (g, p) = grid_loss(
            &AffineParams::translation(0.1, 0.0),
            &AffineParams::identity(),
            16,
            16,
        );
        assert!((g - 0.1).abs() < 1e-12);
        assert!((p - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pyramid_ends_at_full_resolution() {
        assert_eq!(
            pyramid_sizes(32, 128, 128),
            vec![(32, 32), (64, 64), (128, 128)]
        );
        assert_eq!(pyramid_sizes(32, 32, 32), vec![(32, 32)]);
        assert_eq!(
            pyramid_sizes(32, 96, 128),
            vec![(24, 32), (48, 64), (96, 128)]
        );
    }
}
