//! Recurrence stream: block-matching flow, backward warping, occlusion and
//! composition masks, the final blend, and the warping-error metric.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Image, Mask};
use crate::geometry::{bilinear_sample, Grid};

pub const BLOCK: usize = 8;
pub const DEFAULT_LEVELS: usize = 3;
pub const DEFAULT_RADIUS: usize = 4;
pub const OCCLUSION_ALPHA: f64 = 0.01;
pub const OCCLUSION_BETA: f64 = 0.5;
pub const COMPOSITION_SIGMA: f64 = 0.2;
const FLO_MAGIC: &[u8; 4] = b"FLO1";

/// Backward displacement in pixels: `warp(img, flow)(p) = img(p + flow(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
        }
    }

    pub fn from_planes(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "flow planes of {} and {} values for {width}x{height}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self {
            height,
            width,
            u,
            v,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, p: usize) -> (f64, f64) {
        (self.u[p], self.v[p])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }

    /// Sampling grid `p + flow(p)` in normalized coordinates.
    fn grid(&self) -> Result<Grid> {
        let (h, w) = (self.height, self.width);
        let coords = (0..h * w)
            .map(|p| {
                let (y, x) = (p / w, p % w);
                let tx = x as f64 + self.u[p];
                let ty = y as f64 + self.v[p];
                [
                    tx * 2.0 / (w - 1) as f64 - 1.0,
                    ty * 2.0 / (h - 1) as f64 - 1.0,
                ]
            })
            .collect();
        Grid::from_coords(h, w, coords)
    }

    fn as_field(&self) -> FeatureMap {
        let mut data = self.u.clone();
        data.extend_from_slice(&self.v);
        FeatureMap::from_vec(2, self.height, self.width, data).expect("flow planes")
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "frames differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Integer displacement field at one pyramid level, `(dy, dx)` per pixel.
struct LevelFlow {
    h: usize,
    w: usize,
    d: Vec<(i64, i64)>,
}

impl LevelFlow {
    fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            d: vec![(0, 0); h * w],
        }
    }

    /// Twice the coarse displacement at the parent pixel.
    fn upsampled(&self, y: usize, x: usize) -> (i64, i64) {
        let (py, px) = ((y / 2).min(self.h - 1), (x / 2).min(self.w - 1));
        let (dy, dx) = self.d[py * self.w + px];
        (2 * dy, 2 * dx)
    }
}

/// Mean squared difference of block `(y0..y1, x0..x1)` of `cur` against
/// `prev` displaced by `(dy, dx)`, over taps inside `prev`.
fn block_cost(
    prev: &Image,
    cur: &Image,
    (y0, y1, x0, x1): (usize, usize, usize, usize),
    (dy, dx): (i64, i64),
) -> Option<f64> {
    let (h, w) = (prev.height() as i64, prev.width() as i64);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in y0..y1 {
        let sy = y as i64 + dy;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in x0..x1 {
            let sx = x as i64 + dx;
            if sx < 0 || sx >= w {
                continue;
            }
            count += 1;
            for c in 0..cur.channels() {
                let diff = cur.get(c, y, x) - prev.get(c, sy as usize, sx as usize);
                sum += diff * diff;
            }
        }
    }
    let area = (y1 - y0) * (x1 - x0);
    (2 * count >= area).then(|| sum / count as f64)
}

/// Lower cost, then smaller displacement, then row-major order.
fn better(a: (f64, (i64, i64)), b: (f64, (i64, i64))) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    let (na, nb) = (a.1 .0.pow(2) + a.1 .1.pow(2), b.1 .0.pow(2) + b.1 .1.pow(2));
    if na != nb {
        return na < nb;
    }
    a.1 < b.1
}

fn match_level(prev: &Image, cur: &Image, coarse: Option<&LevelFlow>, radius: i64) -> LevelFlow {
    let (h, w) = (cur.height(), cur.width());
    let (by, bx) = (h.div_ceil(BLOCK), w.div_ceil(BLOCK));
    let blocks: Vec<(i64, i64)> = (0..by * bx)
        .into_par_iter()
        .map(|b| {
            let (y0, x0) = ((b / bx) * BLOCK, (b % bx) * BLOCK);
            let rect = (y0, (y0 + BLOCK).min(h), x0, (x0 + BLOCK).min(w));
            let centre = coarse.map_or((0, 0), |c| {
                c.upsampled((rect.0 + rect.1) / 2, (rect.2 + rect.3) / 2)
            });
            let mut best: Option<(f64, (i64, i64))> = None;
            let mut consider = |d: (i64, i64)| {
                if let Some(cost) = block_cost(prev, cur, rect, d) {
                    if best.is_none_or(|b| better((cost, d), b)) {
                        best = Some((cost, d));
                    }
                }
            };
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    consider((dy, dx));
                    if centre != (0, 0) {
                        consider((centre.0 + dy, centre.1 + dx));
                    }
                }
            }
            best.map_or((0, 0), |b| b.1)
        })
        .collect();
    let mut level = LevelFlow::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            level.d[y * w + x] = blocks[(y / BLOCK) * bx + x / BLOCK];
        }
    }
    level
}

fn median3x3(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut win = [0.0f64; 9];
            let mut k = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    win[k] = plane[yy * w + xx];
                    k += 1;
                }
            }
            win.sort_by(f64::total_cmp);
            *o = win[4];
        }
    });
    out
}

/// Smallest frame side accepted for `levels` pyramid levels.
pub fn min_flow_side(levels: usize) -> usize {
    (1usize << levels.min(20)) * BLOCK
}

/// Coarse-to-fine block matching of `cur` against `prev`: the returned
/// backward flow satisfies `prev(p + flow(p)) ~ cur(p)`.
///
/// Each level searches `radius` around zero and around the upsampled
/// coarser estimate; a final 3x3 median smooths each channel.
pub fn estimate_flow(prev: &Image, cur: &Image, levels: usize, radius: usize) -> Result<FlowField> {
    check_same(prev, cur)?;
    let (h, w) = (cur.height(), cur.width());
    let min = min_flow_side(levels);
    if levels == 0 || h.min(w) < min {
        return Err(Error::InvalidPyramid {
            width: w,
            height: h,
            levels,
            min,
        });
    }
    let mut pyramid = vec![(prev.clone(), cur.clone())];
    for _ in 1..levels {
        let (p, c) = pyramid.last().expect("non-empty");
        let (lh, lw) = (p.height() / 2, p.width() / 2);
        pyramid.push((p.area_downsample(lh, lw), c.area_downsample(lh, lw)));
    }
    let mut flow: Option<LevelFlow> = None;
    for (p, c) in pyramid.iter().rev() {
        flow = Some(match_level(p, c, flow.as_ref(), radius as i64));
    }
    let level = flow.expect("at least one level");
    let u: Vec<f64> = level.d.iter().map(|d| d.1 as f64).collect();
    let v: Vec<f64> = level.d.iter().map(|d| d.0 as f64).collect();
    FlowField::from_planes(h, w, median3x3(&u, h, w), median3x3(&v, h, w))
}

/// Bilinear sample of `img` at `p + flow(p)` and the in-bounds mask.
pub fn backward_warp(img: &FeatureMap, flow: &FlowField) -> Result<(FeatureMap, Mask)> {
    if (img.height(), img.width()) != (flow.height, flow.width) {
        return Err(Error::ShapeMismatch("image and flow differ in size".into()));
    }
    bilinear_sample(img, &flow.grid()?)
}

/// Forward-backward consistency test; true means the flow is trusted.
/// Pixels whose backward target falls outside the frame are occluded.
pub fn occlusion_mask(
    flow_fw: &FlowField,
    flow_bw: &FlowField,
    alpha: f64,
    beta: f64,
) -> Result<Mask> {
    if (flow_fw.height, flow_fw.width) != (flow_bw.height, flow_bw.width) {
        return Err(Error::ShapeMismatch(
            "forward and backward flows differ in size".into(),
        ));
    }
    let (fw_at, inb) = backward_warp(&flow_fw.as_field(), flow_bw)?;
    let data = (0..flow_bw.u.len())
        .map(|p| {
            if !inb.at(p) {
                return false;
            }
            let (bu, bv) = flow_bw.at(p);
            let (fu, fv) = (fw_at.at(0, p), fw_at.at(1, p));
            let gap = (bu + fu).powi(2) + (bv + fv).powi(2);
            gap < alpha * (bu * bu + bv * bv + fu * fu + fv * fv) + beta
        })
        .collect();
    Mask::from_vec(flow_bw.height, flow_bw.width, data)
}

/// Channel-summed absolute difference at flat pixel `p`.
#[inline]
fn l1_at(a: &FeatureMap, b: &FeatureMap, p: usize) -> f64 {
    (0..a.channels())
        .map(|c| (a.at(c, p) - b.at(c, p)).abs())
        .sum()
}

/// Per-pixel trust in the warped previous output:
/// `warp_valid * occl * exp(-|prev_warped - raw_out|_1 / sigma)`.
pub fn composition_mask(
    prev_warped: &Image,
    raw_out: &Image,
    warp_valid: &Mask,
    occl: &Mask,
    sigma: f64,
) -> Result<FeatureMap> {
    check_same(prev_warped, raw_out)?;
    if !raw_out.same_grid(warp_valid) || !raw_out.same_grid(occl) {
        return Err(Error::ShapeMismatch(
            "composition mask operands differ in size".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "composition sigma {sigma}"
        )));
    }
    let mut m = FeatureMap::zeros(1, raw_out.height(), raw_out.width());
    for p in 0..warp_valid.len() {
        if warp_valid.at(p) && occl.at(p) {
            *m.at_mut(0, p) = (-l1_at(prev_warped, raw_out, p) / sigma).exp();
        }
    }
    Ok(m)
}

/// `(1 - m') raw_out + m' warp(prev_out, flow)`.
pub fn blend_final(
    raw_out: &Image,
    prev_out: &Image,
    flow: &FlowField,
    m_prime: &FeatureMap,
) -> Result<Image> {
    check_same(raw_out, prev_out)?;
    if m_prime.channels() != 1
        || (m_prime.height(), m_prime.width()) != (raw_out.height(), raw_out.width())
    {
        return Err(Error::ShapeMismatch(
            "composition mask does not match frame".into(),
        ));
    }
    let (warped, _) = backward_warp(prev_out, flow)?;
    let mut out = raw_out.clone();
    for p in 0..raw_out.pixels() {
        let m = m_prime.at(0, p);
        if m != 0.0 {
            for c in 0..raw_out.channels() {
                *out.at_mut(c, p) = (1.0 - m) * raw_out.at(c, p) + m * warped.at(c, p);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpingError {
    pub value: f64,
    /// Frame indices whose trusted region was empty; they contribute 0.
    pub empty_frames: Vec<usize>,
}

impl WarpingError {
    pub fn has_warning(&self) -> bool {
        !self.empty_frames.is_empty()
    }
}

/// Mean over consecutive pairs of the mean channel-summed L1 gap between
/// frame `t` and frame `t-1` warped by `flows[t-1]`, over trusted in-bounds
/// pixels.
pub fn warping_error(frames: &[Image], flows: &[FlowField], occl: &[Mask]) -> Result<WarpingError> {
    if frames.len() < 2 {
        return Err(Error::EmptyInput("warping error needs at least two frames"));
    }
    if flows.len() + 1 != frames.len() {
        return Err(Error::LengthMismatch {
            what: "flows and frame pairs",
            left: flows.len(),
            right: frames.len() - 1,
        });
    }
    if occl.len() != flows.len() {
        return Err(Error::LengthMismatch {
            what: "occlusion masks and flows",
            left: occl.len(),
            right: flows.len(),
        });
    }
    let mut total = 0.0;
    let mut empty_frames = Vec::new();
    for t in 1..frames.len() {
        check_same(&frames[t - 1], &frames[t])?;
        let (warped, valid) = backward_warp(&frames[t - 1], &flows[t - 1])?;
        let trusted = valid.and(&occl[t - 1]);
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..trusted.len() {
            if trusted.at(p) {
                sum += l1_at(&frames[t], &warped, p);
                count += 1;
            }
        }
        if count == 0 {
            empty_frames.push(t);
        } else {
            total += sum / count as f64;
        }
    }
    Ok(WarpingError {
        value: total / (frames.len() - 1) as f64,
        empty_frames,
    })
}

/// Backward flows and occlusion masks for every consecutive pair.
pub fn sequence_flows(
    frames: &[Image],
    levels: usize,
    radius: usize,
) -> Result<(Vec<FlowField>, Vec<Mask>)> {
    let mut flows = Vec::with_capacity(frames.len().saturating_sub(1));
    let mut occl = Vec::with_capacity(frames.len().saturating_sub(1));
    for t in 1..frames.len() {
        let bw = estimate_flow(&frames[t - 1], &frames[t], levels, radius)?;
        let fw = estimate_flow(&frames[t], &frames[t - 1], levels, radius)?;
        occl.push(occlusion_mask(&fw, &bw, OCCLUSION_ALPHA, OCCLUSION_BETA)?);
        flows.push(bw);
    }
    Ok((flows, occl))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u.len());
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for &x in flow.u.iter().chain(&flow.v) {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::Format("missing FLO1 header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format("flow dimensions overflow".into()))?;
    if bytes.len() != 12 + 8 * n {
        return Err(Error::Format(format!(
            "flow {w}x{h} needs {} bytes, file has {}",
            12 + 8 * n,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    let (u, v) = values.split_at(n);
    FlowField::from_planes(h, w, u.to_vec(), v.to_vec())
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ProceduralTexture;

    fn texture(h: usize, w: usize, dx: f64, dy: f64) -> Image {
        ProceduralTexture::new(21, 160.0).render(h, w, dx, dy)
    }

    #[test]
    fn identical_and_constant_frames_give_zero_flow() {
        let a = texture(64, 72, 0.0, 0.0);
        assert_eq!(
            estimate_flow(&a, &a, 3, 4).unwrap(),
            FlowField::zeros(64, 72)
        );
        let c = Image::filled(3, 64, 64, 0.4);
        assert_eq!(
            estimate_flow(&c, &c, 3, 4).unwrap(),
            FlowField::zeros(64, 64)
        );
    }

    #[test]
    fn integer_shift_recovered_on_interior() {
        let prev = texture(64, 64, 0.0, 0.0);
        // cur(x) = prev(x - 3): content moves right by 3.
        let cur = texture(64, 64, -3.0, 0.0);
        let f = estimate_flow(&prev, &cur, 3, 4).unwrap();
        for y in 4..60 {
            for x in 4..60 {
                assert_eq!(f.at(y * 64 + x), (-3.0, 0.0), "({y},{x})");
            }
        }
    }

    #[test]
    fn small_frames_rejected() {
        let a = Image::zeros(3, 63, 100);
        assert!(matches!(
            estimate_flow(&a, &a, 3, 4),
            Err(Error::InvalidPyramid { min: 64, .. })
        ));
    }

    #[test]
    fn ramp_warp() {
        let img = FeatureMap::from_fn(1, 5, 6, |_, _, x| x as f64);
        let (same, valid) = backward_warp(&img, &FlowField::zeros(5, 6)).unwrap();
        assert_eq!(same, img);
        assert!(valid.all_visible());
        let (shifted, valid) = backward_warp(&img, &FlowField::constant(5, 6, 1.0, 0.0)).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(shifted.get(0, y, x), x as f64 + 1.0);
            }
            assert!(!valid.get(y, 5));
        }
    }

    #[test]
    fn occlusion_cases() {
        let z = FlowField::zeros(8, 8);
        assert!(occlusion_mask(&z, &z, 0.01, 0.5).unwrap().all_visible());
        let bw = FlowField::constant(8, 20, 5.0, 0.0);
        let fw = FlowField::constant(8, 20, -5.0, 0.0);
        let m = occlusion_mask(&fw, &bw, 0.01, 0.5).unwrap();
        for y in 0..8 {
            for x in 0..20 {
                assert_eq!(m.get(y, x), x + 5 < 20);
            }
        }
        let same = occlusion_mask(&bw, &bw, 0.01, 0.5).unwrap();
        // |10|^2 = 100 against 0.01 * 50 + 0.5 = 1.0.
        assert!(same.none_visible());
    }

    #[test]
    fn composition_and_blend() {
        let a = texture(6, 6, 0.0, 0.0);
        let all = Mask::visible(6, 6);
        let m = composition_mask(&a, &a, &all, &all, 0.2).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
        let m0 = composition_mask(&a, &a, &Mask::filled(6, 6, false), &all, 0.2).unwrap();
        assert!(m0.as_slice().iter().all(|&v| v == 0.0));

        let b = texture(6, 6, 10.0, 0.0);
        let z = FlowField::zeros(6, 6);
        assert_eq!(
            blend_final(&a, &b, &z, &FeatureMap::zeros(1, 6, 6)).unwrap(),
            a
        );
        assert_eq!(
            blend_final(&a, &b, &z, &FeatureMap::filled(1, 6, 6, 1.0)).unwrap(),
            b
        );
        let half = blend_final(&a, &b, &z, &FeatureMap::filled(1, 6, 6, 0.5)).unwrap();
        for (i, v) in half.as_slice().iter().enumerate() {
            assert!((v - 0.5 * (a.as_slice()[i] + b.as_slice()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn warping_error_closed_forms() {
        let a = Image::filled(3, 4, 4, 0.2);
        let b = Image::filled(3, 4, 4, 0.3);
        let z = FlowField::zeros(4, 4);
        let all = Mask::visible(4, 4);
        let e = warping_error(
            &[a.clone(), a.clone(), a.clone()],
            &[z.clone(), z.clone()],
            &[all.clone(), all.clone()],
        )
        .unwrap();
        assert_eq!(e.value, 0.0);
        let e = warping_error(&[a.clone(), b], &[z.clone()], &[all.clone()]).unwrap();
        assert!((e.value - 0.3).abs() < 1e-12);
        let e = warping_error(
            &[a.clone(), a.clone()],
            &[z.clone()],
            &[Mask::filled(4, 4, false)],
        )
        .unwrap();
        assert!(e.has_warning() && e.value == 0.0);
        assert!(warping_error(&[a.clone(), a], &[], &[]).is_err());
    }

    #[test]
    fn flo_round_trip() {
        let f = FlowField::from_planes(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.25, -4.5], vec![1.0; 6])
            .unwrap();
        let back = decode_flo(&encode_flo(&f)).unwrap();
        assert_eq!(back, f);
        let bytes = encode_flo(&f);
        assert_eq!(&bytes[..4], b"FLO1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert!(decode_flo(&bytes[..20]).is_err());
    }
}
