use rand::Rng;
use rayon::prelude::*;

use super::lsq::{fit_weighted, point_residual_sq};
use super::{AffineFit, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::AffineParams;
use crate::rng::{domain, SeedTree};

pub const DEFAULT_ITERS: usize = 256;
pub const DEFAULT_INLIER_THRESHOLD: f64 = 0.02;
const SAMPLE_SIZE: usize = 3;
const MAX_REFITS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub theta: AffineParams,
    /// Weighted residual RMS of the final refit over its inliers.
    pub rms: f64,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Score {
    count: usize,
    rms: f64,
    index: usize,
}

impl Score {
    /// More inliers, then lower inlier RMS, then earlier hypothesis.
    fn beats(&self, other: &Score) -> bool {
        if self.count != other.count {
            return self.count > other.count;
        }
        if self.rms != other.rms {
            return self.rms < other.rms;
        }
        self.index < other.index
    }
}

fn classify(
    theta: &AffineParams,
    corr: &[Correspondence],
    thresh_sq: f64,
) -> (Vec<bool>, usize, f64) {
    let mut flags = Vec::with_capacity(corr.len());
    let mut count = 0;
    let mut sq = 0.0;
    for c in corr {
        let r = point_residual_sq(theta, c.tgt_point, c.ref_point);
        let inlier = r < thresh_sq;
        if inlier {
            count += 1;
            sq += r;
        }
        flags.push(inlier);
    }
    let rms = if count > 0 {
        (sq / count as f64).sqrt()
    } else {
        f64::INFINITY
    };
    (flags, count, rms)
}

fn refit(corr: &[Correspondence], flags: &[bool]) -> Result<AffineFit> {
    fit_weighted(
        corr.iter()
            .zip(flags)
            .filter(|(_, &f)| f)
            .map(|(c, _)| (c.tgt_point, c.ref_point, c.confidence)),
    )
}

/// Robust affine fit: minimal three-point hypotheses drawn from a seeded
/// stream, scored by inlier count, then refit on the consensus set.
///
/// Hypotheses are drawn up front in a fixed order, so the result is
/// bit-identical for a given seed regardless of how scoring is scheduled.
pub fn fit_affine_ransac(
    corr: &[Correspondence],
    iters: usize,
    inlier_thresh: f64,
    seed: u64,
) -> Result<RansacFit> {
    if corr.len() < SAMPLE_SIZE {
        return Err(Error::DegenerateGeometry(format!(
            "{} correspondences, need at least {SAMPLE_SIZE}",
            corr.len()
        )));
    }
    if !(inlier_thresh > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inlier threshold {inlier_thresh}"
        )));
    }
    let thresh_sq = inlier_thresh * inlier_thresh;
    let mut rng = SeedTree::new(seed).stream(domain::RANSAC, 0);
    let n = corr.len();
    let samples: Vec<[usize; SAMPLE_SIZE]> = (0..iters.max(1))
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            let mut c = rng.random_range(0..n);
            while c == a || c == b {
                c = rng.random_range(0..n);
            }
            [a, b, c]
        })
        .collect();

    let scores: Vec<Option<(Score, AffineParams)>> = samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let fit = fit_weighted(
                s.iter()
                    .map(|&k| (corr[k].tgt_point, corr[k].ref_point, 1.0)),
            )
            .ok()?;
            if fit.theta.validate().is_err() {
                return None;
            }
            let (_, count, rms) = classify(&fit.theta, corr, thresh_sq);
            Some((Score { count, rms, index }, fit.theta))
        })
        .collect();

    let mut best: Option<(Score, AffineParams)> = None;
    for cand in scores.into_iter().flatten() {
        match &best {
            Some((b, _)) if !cand.0.beats(b) => {}
            _ => best = Some(cand),
        }
    }
    let Some((score, hypothesis)) = best else {
        return Err(Error::NoConsensus { inliers: 0 });
    };
    if score.count < SAMPLE_SIZE {
        return Err(Error::NoConsensus {
            inliers: score.count,
        });
    }

    let (mut flags, mut count, _) = classify(&hypothesis, corr, thresh_sq);
    let mut fit = match refit(corr, &flags) {
        Ok(f) => f,
        Err(_) => AffineFit {
            theta: hypothesis,
            rms: score.rms,
        },
    };
    for _ in 0..MAX_REFITS {
        let (next_flags, next_count, _) = classify(&fit.theta, corr, thresh_sq);
        if next_count <= count || next_flags == flags {
            break;
        }
        match refit(corr, &next_flags) {
            Ok(f) => {
                fit = f;
                flags = next_flags;
                count = next_count;
            }
            Err(_) => break,
        }
    }
    Ok(RansacFit {
        theta: fit.theta,
        rms: fit.rms,
        inliers: flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{fit_affine_wlsq, grid_loss};

    fn exact(theta: &AffineParams, rng: &mut impl Rng, n: usize) -> Vec<Correspondence> {
        (0..n)
            .map(|_| {
                let t = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
                let (x, y) = theta.apply(t[0], t[1]);
                Correspondence {
                    ref_point: [x, y],
                    tgt_point: t,
                    confidence: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn rejects_outliers() {
        let truth = AffineParams::from_components(0.1, (1.05, 0.95), 0.02, (0.1, -0.05));
        let mut rng = SeedTree::new(1).stream(domain::TEST, 0);
        let mut corr = exact(&truth, &mut rng, 20);
        for _ in 0..10 {
            corr.push(Correspondence {
                ref_point: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                tgt_point: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                confidence: 1.0,
            });
        }
        let fit = fit_affine_ransac(&corr, DEFAULT_ITERS, 0.02, 7).unwrap();
        assert!(fit.inlier_count() >= 20);
        assert!(fit.inliers[..20].iter().all(|&v| v));
        let (g, _) = grid_loss(&fit.theta, &truth, 32, 32);
        assert!(g < 1e-3, "grid term {g}");
    }

    #[test]
    fn all_inliers_matches_wlsq() {
        let truth = AffineParams([0.9, 0.1, 0.0, -0.05, 1.1, 0.2]);
        let mut rng = SeedTree::new(2).stream(domain::TEST, 0);
        let corr = exact(&truth, &mut rng, 12);
        let r = fit_affine_ransac(&corr, 64, 0.02, 3).unwrap();
        let w = fit_affine_wlsq(&corr).unwrap();
        assert_eq!(r.theta, w.theta);
        assert_eq!(r.inlier_count(), 12);
    }

    #[test]
    fn minimal_sample_interpolates() {
        let truth = AffineParams([1.2, -0.1, 0.05, 0.2, 0.8, -0.3]);
        let pts = [[-0.5, -0.5], [0.6, -0.2], [0.0, 0.7]];
        let corr: Vec<_> = pts
            .iter()
            .map(|&t| {
                let (x, y) = truth.apply(t[0], t[1]);
                Correspondence {
                    ref_point: [x, y],
                    tgt_point: t,
                    confidence: 1.0,
                }
            })
            .collect();
        let r = fit_affine_ransac(&corr, 16, 0.02, 0).unwrap();
        for (a, b) in r.theta.0.iter().zip(truth.0.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let truth = AffineParams::translation(0.1, 0.0);
        let mut rng = SeedTree::new(4).stream(domain::TEST, 0);
        let mut corr = exact(&truth, &mut rng, 15);
        for c in corr.iter_mut().step_by(3) {
            c.ref_point[0] += 0.3;
        }
        let a = fit_affine_ransac(&corr, 100, 0.02, 99).unwrap();
        let b = fit_affine_ransac(&corr, 100, 0.02, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_consensus() {
        let corr: Vec<_> = (0..6)
            .map(|k| Correspondence {
                ref_point: [k as f64 * 0.3 - 0.9, 0.1 * (k * k) as f64],
                tgt_point: [0.0, 0.0],
                confidence: 1.0,
            })
            .collect();
        assert!(fit_affine_ransac(&corr, 32, 0.02, 0).is_err());
        assert!(matches!(
            fit_affine_ransac(&corr[..2], 32, 0.02, 0),
            Err(Error::DegenerateGeometry(_))
        ));
    }
}
