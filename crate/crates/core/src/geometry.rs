//! Normalized coordinate grids, affine warps and bilinear sampling.
//!
//! Coordinates are normalized with the corners at pixel centres: `(-1, -1)`
//! is the centre of the top-left pixel and `(+1, +1)` the centre of the
//! bottom-right one, so column `j` of a `w`-wide map sits at
//! `x = -1 + 2j / (w - 1)`. An [`AffineParams`] maps target coordinates to
//! reference coordinates; sampling a reference through
//! `affine_grid(theta, ..)` therefore aligns it onto the target.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Mask};

/// Slack, in pixels, for taps that land on the border through roundoff.
const EDGE_TOL: f64 = 1e-9;

/// Sampled mask values at or above this are treated as visible.
pub const MASK_WARP_THRESHOLD: f64 = 0.999;

/// Smallest `|det|` accepted for a transform used to warp.
pub const MIN_ABS_DET: f64 = 1e-8;

/// Row-major 2x3 affine matrix `[a11, a12, tx, a21, a22, ty]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams(pub [f64; 6]);

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub const fn identity() -> Self {
        Self([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    /// Rotation (radians), anisotropic scale, shear and translation, composed
    /// as `T * R * Shear * S`.
    pub fn from_components(
        rotation: f64,
        scale: (f64, f64),
        shear: f64,
        translation: (f64, f64),
    ) -> Self {
        let (c, s) = (rotation.cos(), rotation.sin());
        // R * [[1, shear], [0, 1]] * diag(sx, sy)
        let (sx, sy) = scale;
        let m11 = c * sx;
        let m12 = (c * shear - s) * sy;
        let m21 = s * sx;
        let m22 = (s * shear + c) * sy;
        Self([m11, m12, translation.0, m21, m22, translation.1])
    }

    pub fn params(&self) -> &[f64; 6] {
        &self.0
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.0;
        (a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5])
    }

    pub fn det(&self) -> f64 {
        self.0[0] * self.0[4] - self.0[1] * self.0[3]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &AffineParams) -> AffineParams {
        let a = &self.0;
        let b = &inner.0;
        AffineParams([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    pub fn inverse(&self) -> Result<AffineParams> {
        let d = self.det();
        if !d.is_finite() || d.abs() <= MIN_ABS_DET {
            return Err(Error::DegenerateGeometry(format!(
                "affine determinant {d:e}"
            )));
        }
        let a = &self.0;
        let i11 = a[4] / d;
        let i12 = -a[1] / d;
        let i21 = -a[3] / d;
        let i22 = a[0] / d;
        Ok(AffineParams([
            i11,
            i12,
            -(i11 * a[2] + i12 * a[5]),
            i21,
            i22,
            -(i21 * a[2] + i22 * a[5]),
        ]))
    }

    /// Checks the invariants required of a transform used for warping.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite affine parameters {:?}",
                self.0
            )));
        }
        if self.det().abs() <= MIN_ABS_DET {
            return Err(Error::DegenerateGeometry(format!(
                "affine determinant {:e} below {MIN_ABS_DET:e}",
                self.det()
            )));
        }
        Ok(())
    }
}

/// `h x w` field of normalized `(x, y)` sampling coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl Grid {
    /// The identity mesh: normalized centre of every cell.
    pub fn base(h: usize, w: usize) -> Result<Grid> {
        check_grid_dims(h, w)?;
        let mut coords = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                coords.push([normalize(j, w), normalize(i, h)]);
            }
        }
        Ok(Grid {
            height: h,
            width: w,
            coords,
        })
    }

    pub fn from_coords(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Grid> {
        if coords.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} grid coordinates for {height}x{width}",
                coords.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            coords,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        self.coords[i * self.width + j]
    }

    /// Applies `theta` to every coordinate.
    pub fn transformed(&self, theta: &AffineParams) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            coords: self
                .coords
                .iter()
                .map(|&[x, y]| {
                    let (u, v) = theta.apply(x, y);
                    [u, v]
                })
                .collect(),
        }
    }
}

fn check_grid_dims(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least 2x2, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Normalized coordinate of index `i` along an axis of `n` cells.
#[inline]
pub fn normalize(i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Inverse of [`normalize`], as a fractional pixel index.
#[inline]
pub fn denormalize(u: f64, n: usize) -> f64 {
    (u + 1.0) * 0.5 * (n.saturating_sub(1)) as f64
}

/// Sampling grid of `theta` applied to the `h x w` base mesh.
pub fn affine_grid(theta: &AffineParams, h: usize, w: usize) -> Result<Grid> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite affine parameters {:?}",
            theta.0
        )));
    }
    Ok(Grid::base(h, w)?.transformed(theta))
}

/// Floor-cell interpolation taps along one axis.
#[derive(Debug, Clone, Copy)]
struct AxisTap {
    i0: usize,
    i1: usize,
    frac: f64,
}

#[inline]
fn axis_tap(pix: f64, n: usize) -> Option<AxisTap> {
    if !pix.is_finite() {
        return None;
    }
    let max = (n - 1) as f64;
    if pix < -EDGE_TOL || pix > max + EDGE_TOL {
        return None;
    }
    if n == 1 {
        return Some(AxisTap {
            i0: 0,
            i1: 0,
            frac: 0.0,
        });
    }
    // Snap round-off near pixel centres so exact grids reproduce exact values.
    let r = pix.round();
    let p = if (pix - r).abs() <= EDGE_TOL { r } else { pix }.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(n - 2);
    Some(AxisTap {
        i0,
        i1: i0 + 1,
        frac: p - i0 as f64,
    })
}

#[derive(Debug, Clone, Copy)]
struct Taps {
    x: AxisTap,
    y: AxisTap,
}

#[inline]
fn taps_at(u: f64, v: f64, h: usize, w: usize) -> Option<Taps> {
    Some(Taps {
        x: axis_tap(denormalize(u, w), w)?,
        y: axis_tap(denormalize(v, h), h)?,
    })
}

impl Taps {
    #[inline]
    fn sample(&self, plane: &[f64], w: usize) -> f64 {
        let (x, y) = (self.x, self.y);
        let v00 = plane[y.i0 * w + x.i0];
        let v01 = plane[y.i0 * w + x.i1];
        let v10 = plane[y.i1 * w + x.i0];
        let v11 = plane[y.i1 * w + x.i1];
        let top = v00 + (v01 - v00) * x.frac;
        let bottom = v10 + (v11 - v10) * x.frac;
        top + (bottom - top) * y.frac
    }

    /// Derivatives of the bilinear interpolant with respect to the
    /// fractional pixel coordinates, on the floor cell.
    #[inline]
    fn pixel_gradient(&self, plane: &[f64], w: usize) -> (f64, f64) {
        let (x, y) = (self.x, self.y);
        let v00 = plane[y.i0 * w + x.i0];
        let v01 = plane[y.i0 * w + x.i1];
        let v10 = plane[y.i1 * w + x.i0];
        let v11 = plane[y.i1 * w + x.i1];
        let d_dx = (1.0 - y.frac) * (v01 - v00) + y.frac * (v11 - v10);
        let d_dy = (1.0 - x.frac) * (v10 - v00) + x.frac * (v11 - v01);
        (d_dx, d_dy)
    }
}

/// Bilinear sampling of `src` at every grid coordinate.
///
/// The returned mask is visible exactly where the interpolation cell lies
/// inside `src`; out-of-bounds outputs are zero.
pub fn bilinear_sample(src: &FeatureMap, grid: &Grid) -> Result<(FeatureMap, Mask)> {
    if src.height() == 0 || src.width() == 0 {
        return Err(Error::ShapeMismatch("cannot sample an empty map".into()));
    }
    let (h, w) = (src.height(), src.width());
    let (oh, ow) = (grid.height(), grid.width());
    let taps: Vec<Option<Taps>> = grid
        .coords()
        .par_iter()
        .map(|&[u, v]| taps_at(u, v, h, w))
        .collect();
    let mut out = FeatureMap::zeros(src.channels(), oh, ow);
    for c in 0..src.channels() {
        let plane = src.plane(c);
        let dst = out.plane_mut(c);
        for (d, t) in dst.iter_mut().zip(&taps) {
            if let Some(t) = t {
                *d = t.sample(plane, w);
            }
        }
    }
    let valid = Mask::from_vec(oh, ow, taps.iter().map(Option::is_some).collect())?;
    Ok((out, valid))
}

/// Warps a validity mask conservatively: a warped pixel is visible only if
/// its interpolated value reaches [`MASK_WARP_THRESHOLD`] and its cell is in
/// bounds.
pub fn warp_mask(m: &Mask, grid: &Grid) -> Result<Mask> {
    let (sampled, inb) = bilinear_sample(&m.to_field(), grid)?;
    let data = sampled
        .plane(0)
        .iter()
        .zip(inb.as_slice())
        .map(|(&v, &ok)| ok && v >= MASK_WARP_THRESHOLD)
        .collect();
    Mask::from_vec(grid.height(), grid.width(), data)
}

/// Per-pixel derivative of the sampled intensities with respect to the six
/// affine parameters, for every channel.
#[derive(Debug, Clone)]
pub struct SampleJacobian {
    channels: usize,
    height: usize,
    width: usize,
    rows: Vec<[f64; 6]>,
    /// The warped map itself.
    pub values: FeatureMap,
    /// In-bounds mask of the warp; rows outside it are zero.
    pub valid: Mask,
}

impl SampleJacobian {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row for channel `c` at flat pixel index `p`.
    #[inline]
    pub fn row(&self, c: usize, p: usize) -> &[f64; 6] {
        &self.rows[c * self.height * self.width + p]
    }
}

/// Analytic Jacobian of `bilinear_sample(src, affine_grid(theta, h, w))`
/// with respect to `theta`, where `h x w` is the shape of `src`.
///
/// Derivatives use the floor interpolation cell, so at exact cell
/// boundaries the one-sided (right/below) slope is reported.
pub fn sample_jacobian_theta(src: &FeatureMap, theta: &AffineParams) -> Result<SampleJacobian> {
    if !src.is_finite() {
        return Err(Error::InvalidParameter("non-finite source map".into()));
    }
    let (h, w) = (src.height(), src.width());
    let grid = affine_grid(theta, h, w)?;
    let base = Grid::base(h, w)?;
    let sx = 0.5 * (w - 1) as f64;
    let sy = 0.5 * (h - 1) as f64;
    let n = h * w;
    let mut rows = vec![[0.0; 6]; src.channels() * n];
    let mut values = FeatureMap::zeros(src.channels(), h, w);
    let mut valid = Vec::with_capacity(n);
    for p in 0..n {
        let [u, v] = grid.coords()[p];
        let Some(t) = taps_at(u, v, h, w) else {
            valid.push(false);
            continue;
        };
        valid.push(true);
        let [bx, by] = base.coords()[p];
        for c in 0..src.channels() {
            let plane = src.plane(c);
            *values.at_mut(c, p) = t.sample(plane, w);
            let (gx, gy) = t.pixel_gradient(plane, w);
            let (du, dv) = (gx * sx, gy * sy);
            rows[c * n + p] = [du * bx, du * by, du, dv * bx, dv * by, dv];
        }
    }
    Ok(SampleJacobian {
        channels: src.channels(),
        height: h,
        width: w,
        rows,
        values,
        valid: Mask::from_vec(h, w, valid)?,
    })
}
