use nalgebra::{Matrix3, Vector3};

use super::{AffineFit, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::AffineParams;

/// Normal matrices with a condition number at or above this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Confidence-weighted least-squares affine map from target points to
/// reference points.
pub fn fit_affine_wlsq(corr: &[Correspondence]) -> Result<AffineFit> {
    fit_weighted(
        corr.iter()
            .map(|c| (c.tgt_point, c.ref_point, c.confidence)),
    )
}

pub(crate) fn fit_weighted(
    points: impl Iterator<Item = ([f64; 2], [f64; 2], f64)> + Clone,
) -> Result<AffineFit> {
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs_x = Vector3::<f64>::zeros();
    let mut rhs_y = Vector3::<f64>::zeros();
    let mut count = 0usize;
    let mut total_weight = 0.0;
    for ([tx, ty], [rx, ry], w) in points.clone() {
        if w <= 0.0 {
            continue;
        }
        let a = Vector3::new(tx, ty, 1.0);
        normal += w * a * a.transpose();
        rhs_x += w * rx * a;
        rhs_y += w * ry * a;
        count += 1;
        total_weight += w;
    }
    if count < 3 || total_weight <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "{count} weighted correspondences, need at least 3"
        )));
    }
    // Scale-free conditioning test.
    let scaled = normal / total_weight;
    let eig = scaled.symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo > 0.0) || hi / lo >= MAX_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "normal matrix condition number {:e}",
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        )));
    }
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("normal matrix not positive definite".into()))?;
    let px = chol.solve(&(rhs_x / total_weight));
    let py = chol.solve(&(rhs_y / total_weight));
    let theta = AffineParams([px[0], px[1], px[2], py[0], py[1], py[2]]);
    let mut sq = 0.0;
    for (t, r, w) in points {
        if w > 0.0 {
            sq += w * point_residual_sq(&theta, t, r);
        }
    }
    Ok(AffineFit {
        theta,
        rms: (sq / total_weight).sqrt(),
    })
}

#[inline]
pub(crate) fn point_residual_sq(theta: &AffineParams, tgt: [f64; 2], refp: [f64; 2]) -> f64 {
    let (x, y) = theta.apply(tgt[0], tgt[1]);
    (x - refp[0]).powi(2) + (y - refp[1]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::CorrespondenceSet;

    fn generate(theta: &AffineParams, pts: &[[f64; 2]]) -> CorrespondenceSet {
        pts.iter()
            .map(|&t| {
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
    fn recovers_generating_affine() {
        let truth = AffineParams([1.1, 0.0, 0.2, 0.0, 0.9, -0.1]);
        let pts = [
            [-0.5, -0.5],
            [0.5, -0.4],
            [0.1, 0.6],
            [-0.7, 0.3],
            [0.8, 0.8],
        ];
        let fit = fit_affine_wlsq(&generate(&truth, &pts)).unwrap();
        for (a, b) in fit.theta.0.iter().zip(truth.0.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn identity_correspondences() {
        let pts = [[-0.5, -0.5], [0.5, -0.4], [0.1, 0.6], [0.3, 0.3]];
        let fit = fit_affine_wlsq(&generate(&AffineParams::identity(), &pts)).unwrap();
        for (a, b) in fit.theta.0.iter().zip(AffineParams::identity().0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = [[-0.5, -0.5], [0.0, 0.0], [0.5, 0.5]];
        let err = fit_affine_wlsq(&generate(&AffineParams::identity(), &pts));
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))));
        let two = [[-0.5, -0.5], [0.5, 0.1]];
        assert!(fit_affine_wlsq(&generate(&AffineParams::identity(), &two)).is_err());
    }
}
