//! Irregular hole masks: integer-only rasterization so masks are
//! bit-identical per seed on every platform.

use rand::Rng;

use super::pair::{sample_theta, ThetaRange};
use crate::error::{Error, Result};
use crate::field::Mask;
use crate::geometry::{affine_grid, bilinear_sample, MASK_WARP_THRESHOLD};
use crate::rng::{domain, SeedTree};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGenParams {
    pub seed: u64,
    /// Inclusive range of stroke counts.
    pub strokes: (u32, u32),
    /// Inclusive stroke width range, pixels.
    pub stroke_width: (u32, u32),
    /// Inclusive range of polyline vertex counts per stroke.
    pub stroke_vertices: (u32, u32),
    /// Maximum per-axis step between stroke vertices, pixels.
    pub stroke_step: u32,
    pub blobs: (u32, u32),
    /// Inclusive elliptical semi-axis range, pixels.
    pub blob_radius: (u32, u32),
    /// Disk dilation applied to the final hole.
    pub dilation: u32,
}

impl Default for MaskGenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            strokes: (1, 4),
            stroke_width: (3, 9),
            stroke_vertices: (3, 8),
            stroke_step: 24,
            blobs: (0, 3),
            blob_radius: (4, 16),
            dilation: 0,
        }
    }
}

impl MaskGenParams {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("strokes", self.strokes),
            ("stroke_width", self.stroke_width),
            ("stroke_vertices", self.stroke_vertices),
            ("blobs", self.blobs),
            ("blob_radius", self.blob_radius),
        ] {
            if lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "{name} range {lo}..={hi} is empty"
                )));
            }
        }
        if self.stroke_vertices.0 < 2 {
            return Err(Error::InvalidParameter(
                "strokes need at least 2 vertices".into(),
            ));
        }
        if self.stroke_width.0 == 0 || self.blob_radius.0 == 0 {
            return Err(Error::InvalidParameter(
                "stroke width and blob radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Holes as a row-major boolean raster (true = hole) during rasterization.
struct HoleRaster {
    h: i64,
    w: i64,
    hole: Vec<bool>,
}

impl HoleRaster {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h: h as i64,
            w: w as i64,
            hole: vec![false; h * w],
        }
    }

    fn mark(&mut self, y: i64, x: i64) {
        if y >= 0 && y < self.h && x >= 0 && x < self.w {
            self.hole[(y * self.w + x) as usize] = true;
        }
    }

    /// Disk of (integer) diameter `width` centred on `(y, x)`.
    fn stamp(&mut self, y: i64, x: i64, width: i64) {
        // Squared-distance test in doubled coordinates handles even widths.
        let r2 = width * width;
        let reach = width / 2 + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (ey, ex) = (2 * dy + (1 - width % 2), 2 * dx + (1 - width % 2));
                if ey * ey + ex * ex <= r2 {
                    self.mark(y + dy, x + dx);
                }
            }
        }
    }

    fn segment(&mut self, (y0, x0): (i64, i64), (y1, x1): (i64, i64), width: i64) {
        // Bresenham walk stamping the brush at every step.
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.stamp(y, x, width);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn ellipse(&mut self, cy: i64, cx: i64, ry: i64, rx: i64) {
        let bound = (rx * ry) * (rx * ry);
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                if (dx * ry).pow(2) + (dy * rx).pow(2) <= bound {
                    self.mark(cy + dy, cx + dx);
                }
            }
        }
    }

    fn into_mask(self) -> Mask {
        Mask::from_vec(
            self.h as usize,
            self.w as usize,
            self.hole.into_iter().map(|h| !h).collect(),
        )
        .expect("raster shape")
    }
}

/// Union of random-walk polyline strokes and axis-aligned elliptical blobs.
pub fn gen_irregular_mask(h: usize, w: usize, params: &MaskGenParams) -> Result<Mask> {
    params.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter("mask must be non-empty".into()));
    }
    let mut rng = SeedTree::new(params.seed).stream(domain::MASK, 0);
    let mut raster = HoleRaster::new(h, w);
    let (hi, wi) = (h as i64, w as i64);
    let step = params.stroke_step.max(1) as i64;

    let strokes = rng.random_range(params.strokes.0..=params.strokes.1);
    for _ in 0..strokes {
        let width = rng.random_range(params.stroke_width.0..=params.stroke_width.1) as i64;
        let vertices = rng.random_range(params.stroke_vertices.0..=params.stroke_vertices.1);
        let mut p = (rng.random_range(0..hi), rng.random_range(0..wi));
        for _ in 1..vertices {
            let q = (
                (p.0 + rng.random_range(-step..=step)).clamp(0, hi - 1),
                (p.1 + rng.random_range(-step..=step)).clamp(0, wi - 1),
            );
            raster.segment(p, q, width);
            p = q;
        }
    }

    let blobs = rng.random_range(params.blobs.0..=params.blobs.1);
    for _ in 0..blobs {
        let ry = rng.random_range(params.blob_radius.0..=params.blob_radius.1) as i64;
        let rx = rng.random_range(params.blob_radius.0..=params.blob_radius.1) as i64;
        let (cy, cx) = (rng.random_range(0..hi), rng.random_range(0..wi));
        raster.ellipse(cy, cx, ry, rx);
    }
    Ok(dilate_mask(&raster.into_mask(), params.dilation as usize))
}

/// Attempts of [`gen_mask_with_fraction`] before giving up.
pub const FRACTION_ATTEMPTS: u64 = 1000;

/// Draws irregular masks until the hole fraction lies in the inclusive
/// `fraction` range. Attempt 0 uses `params.seed`; later attempts use seeds
/// drawn from mask stream 2 of that seed.
pub fn gen_mask_with_fraction(
    h: usize,
    w: usize,
    params: &MaskGenParams,
    fraction: (f64, f64),
) -> Result<Mask> {
    let (lo, hi) = fraction;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidParameter(format!(
            "hole fraction range ({lo}, {hi})"
        )));
    }
    let mut seeds = SeedTree::new(params.seed).stream(domain::MASK, 2);
    let mut attempt = params.clone();
    for k in 0..FRACTION_ATTEMPTS {
        if k > 0 {
            attempt.seed = seeds.random();
        }
        let m = gen_irregular_mask(h, w, &attempt)?;
        if (lo..=hi).contains(&m.hole_fraction()) {
            return Ok(m);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no mask with hole fraction in [{lo}, {hi}] after {FRACTION_ATTEMPTS} attempts"
    )))
}

/// Grows the hole of a validity mask by a disk of the given radius
/// (squared distance `<= radius^2`).
pub fn dilate_mask(m: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return m.clone();
    }
    let (h, w) = (m.height() as i64, m.width() as i64);
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = m.clone();
    for y in 0..h {
        for x in 0..w {
            if m.get(y as usize, x as usize) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w {
                    out.set(yy as usize, xx as usize, false);
                }
            }
        }
    }
    out
}

/// Random affine augmentation of a hole mask. The hole indicator is sampled
/// with border clamping and a pixel stays visible only if the interpolated
/// visibility reaches the warp threshold, so holes never shrink through
/// blending.
pub fn random_affine_mask(m: &Mask, range: &ThetaRange, seed: u64) -> Result<Mask> {
    let mut rng = SeedTree::new(seed).stream(domain::MASK, 1);
    let theta = sample_theta(range, &mut rng)?;
    let (h, w) = (m.height(), m.width());
    let grid = affine_grid(&theta, h, w)?;
    let clamped: Vec<[f64; 2]> = grid
        .coords()
        .iter()
        .map(|&[x, y]| [x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)])
        .collect();
    let grid = crate::geometry::Grid::from_coords(h, w, clamped)?;
    let (sampled, _) = bilinear_sample(&m.to_field(), &grid)?;
    Mask::from_vec(
        h,
        w,
        sampled
            .plane(0)
            .iter()
            .map(|&v| v >= MASK_WARP_THRESHOLD)
            .collect(),
    )
}
