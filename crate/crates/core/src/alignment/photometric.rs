use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Mask};
use crate::geometry::{
    affine_grid, bilinear_sample, sample_jacobian_theta, warp_mask, AffineParams,
};

/// Minimum number of overlapping valid pixels for photometric refinement.
pub const MIN_OVERLAP: usize = 16;

const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricFit {
    pub theta: AffineParams,
    /// Mean squared residual (summed over channels) over the valid overlap.
    pub residual: f64,
    pub initial_residual: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

/// Target pixels that are visible in the target and whose warped reference
/// tap is visible and in bounds.
pub fn overlap_mask(theta: &AffineParams, m_r: &Mask, m_t: &Mask) -> Result<Mask> {
    let grid = affine_grid(theta, m_t.height(), m_t.width())?;
    Ok(warp_mask(m_r, &grid)?.and(m_t))
}

/// Mean squared masked residual of `warp(f_r, theta) - f_t` and the size of
/// the overlap it was measured on.
pub fn masked_residual(
    theta: &AffineParams,
    f_r: &FeatureMap,
    m_r: &Mask,
    f_t: &FeatureMap,
    m_t: &Mask,
) -> Result<(f64, usize)> {
    check_shapes(f_r, m_r, f_t, m_t)?;
    let grid = affine_grid(theta, f_t.height(), f_t.width())?;
    let (warped, _) = bilinear_sample(f_r, &grid)?;
    let valid = warp_mask(m_r, &grid)?.and(m_t);
    let mut sum = 0.0;
    let mut count = 0;
    for p in 0..valid.len() {
        if valid.at(p) {
            count += 1;
            for c in 0..f_t.channels() {
                sum += (warped.at(c, p) - f_t.at(c, p)).powi(2);
            }
        }
    }
    let mean = if count > 0 {
        sum / count as f64
    } else {
        f64::INFINITY
    };
    Ok((mean, count))
}

/// Gauss-Newton system of `E(theta) = 1/2 sum_{p in region} |warp(f_r) - f_t|^2`
/// over a fixed target region.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub hessian: Matrix6<f64>,
    pub gradient: Vector6<f64>,
    pub objective: f64,
    pub count: usize,
}

/// Builds `J^T J`, `J^T r` and the objective over `region` (target pixels),
/// skipping pixels whose warp falls out of bounds.
pub fn normal_equations(
    theta: &AffineParams,
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    region: &Mask,
) -> Result<NormalEquations> {
    if !f_r.same_shape(f_t) || !f_t.same_grid(region) {
        return Err(Error::ShapeMismatch(
            "photometric operands differ in shape".into(),
        ));
    }
    let jac = sample_jacobian_theta(f_r, theta)?;
    let mut hessian = Matrix6::<f64>::zeros();
    let mut gradient = Vector6::<f64>::zeros();
    let mut objective = 0.0;
    let mut count = 0;
    for p in 0..region.len() {
        if !region.at(p) || !jac.valid.at(p) {
            continue;
        }
        count += 1;
        for c in 0..f_t.channels() {
            let r = jac.values.at(c, p) - f_t.at(c, p);
            let j = Vector6::from_row_slice(jac.row(c, p));
            hessian += j * j.transpose();
            gradient += j * r;
            objective += 0.5 * r * r;
        }
    }
    Ok(NormalEquations {
        hessian,
        gradient,
        objective,
        count,
    })
}

fn check_shapes(f_r: &FeatureMap, m_r: &Mask, f_t: &FeatureMap, m_t: &Mask) -> Result<()> {
    if !f_r.same_shape(f_t) || !f_r.same_grid(m_r) || !f_t.same_grid(m_t) {
        return Err(Error::ShapeMismatch(
            "photometric operands differ in shape".into(),
        ));
    }
    Ok(())
}

/// Levenberg-damped Gauss-Newton refinement of `theta0` that minimizes the
/// masked residual of `warp(f_r, theta)` against `f_t`.
///
/// The damped system is `(H + lambda * diag(H)) delta = -g`; lambda starts at
/// 1e-3, shrinks tenfold after an accepted step and grows tenfold after a
/// rejected one. A step is accepted only if it lowers the mean residual, so
/// the result is never worse than `theta0`.
pub fn refine_affine_photometric(
    theta0: &AffineParams,
    f_r: &FeatureMap,
    m_r: &Mask,
    f_t: &FeatureMap,
    m_t: &Mask,
    max_iters: usize,
    tol: f64,
) -> Result<PhotometricFit> {
    theta0.validate()?;
    let (initial, count) = masked_residual(theta0, f_r, m_r, f_t, m_t)?;
    if count < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap {
            got: count,
            need: MIN_OVERLAP,
        });
    }
    let mut theta = *theta0;
    let mut residual = initial;
    let mut lambda = LAMBDA_START;
    let mut iterations = 0;
    let mut accepted_steps = 0;

    'outer: while iterations < max_iters {
        let region = overlap_mask(&theta, m_r, m_t)?;
        let ne = normal_equations(&theta, f_r, f_t, &region)?;
        if ne.gradient.iter().all(|&g| g == 0.0) {
            break;
        }
        loop {
            iterations += 1;
            let mut damped = ne.hessian;
            for k in 0..6 {
                damped[(k, k)] += lambda * ne.hessian[(k, k)];
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-ne.gradient)));
            if let Some(step) = step {
                if step.norm() < tol {
                    break 'outer;
                }
                let mut cand = theta;
                for k in 0..6 {
                    cand.0[k] += step[k];
                }
                if cand.validate().is_ok() {
                    let (r, n) = masked_residual(&cand, f_r, m_r, f_t, m_t)?;
                    if n >= MIN_OVERLAP && r < residual {
                        theta = cand;
                        residual = r;
                        lambda = (lambda / 10.0).max(1e-12);
                        accepted_steps += 1;
                        continue 'outer;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX || iterations >= max_iters {
                break 'outer;
            }
        }
    }
    Ok(PhotometricFit {
        theta,
        residual,
        initial_residual: initial,
        iterations,
        accepted_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::grid_loss;

    fn smooth(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(1, h, w, |_, y, x| {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            0.5 + 0.25 * (6.0 * u + 1.0).sin() * (5.0 * v - 0.5).cos() + 0.2 * (9.0 * u * v).sin()
        })
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let a = smooth(40, 40);
        let truth = AffineParams::from_components(0.05, (0.95, 0.95), 0.0, (0.02, -0.03));
        let (b, valid) = bilinear_sample(&a, &affine_grid(&truth, 40, 40).unwrap()).unwrap();
        let full = Mask::visible(40, 40);
        let fit = refine_affine_photometric(&truth, &a, &full, &b, &valid, 50, 1e-8).unwrap();
        assert_eq!(fit.theta, truth);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn converges_from_translation_offset() {
        let a = smooth(48, 48);
        let truth = AffineParams::from_components(0.08, (0.9, 0.92), 0.0, (0.03, 0.02));
        let (b, valid) = bilinear_sample(&a, &affine_grid(&truth, 48, 48).unwrap()).unwrap();
        let mut start = truth;
        start.0[2] += 0.05;
        let full = Mask::visible(48, 48);
        let fit = refine_affine_photometric(&start, &a, &full, &b, &valid, 50, 1e-10).unwrap();
        let (g, _) = grid_loss(&fit.theta, &truth, 48, 48);
        assert!(g < 1e-3, "grid term {g}");
        assert!(fit.residual <= fit.initial_residual);
    }

    #[test]
    fn constant_image_leaves_theta() {
        let a = FeatureMap::filled(1, 20, 20, 0.3);
        let m = Mask::visible(20, 20);
        let start = AffineParams::translation(0.1, 0.0);
        let fit = refine_affine_photometric(&start, &a, &m, &a, &m, 20, 1e-8).unwrap();
        assert_eq!(fit.theta, start);
    }

    #[test]
    fn tiny_overlap_is_an_error() {
        let a = smooth(20, 20);
        let mut m = Mask::filled(20, 20, false);
        m.set(3, 3, true);
        let err = refine_affine_photometric(&AffineParams::identity(), &a, &m, &a, &m, 10, 1e-8);
        assert!(matches!(
            err,
            Err(Error::InsufficientOverlap { got: 1, .. })
        ));
    }
}
