//! Dense planar fields: multi-channel feature maps (and RGB images) plus
//! binary validity masks.

use crate::error::{Error, Result};

/// `channels x height x width` grid of reals, stored planar (channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// An RGB frame with intensities in `[0, 1]`: a three-channel [`FeatureMap`].
pub type Image = FeatureMap;

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn same_grid(&self, mask: &Mask) -> bool {
        self.height == mask.height() && self.width == mask.width()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Value at flat spatial index `p = y * width + x`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f64 {
        self.data[c * self.pixels() + p]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, p: usize) -> &mut f64 {
        let n = self.pixels();
        &mut self.data[c * n + p]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Channel vector at flat spatial index `p`.
    pub fn vector(&self, p: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.at(c, p)).collect()
    }

    pub fn set_vector(&mut self, p: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.channels);
        for (c, &val) in v.iter().enumerate() {
            *self.at_mut(c, p) = val;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pointwise `a * self + b * other`.
    pub fn linear_combination(&self, a: f64, other: &FeatureMap, b: f64) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("linear combination operands".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(FeatureMap { data, ..*self })
    }

    /// Area-average resampling onto an `out_h x out_w` grid. Each output
    /// cell covers the integer block `[i*H/out_h, (i+1)*H/out_h)`.
    pub fn area_downsample(&self, out_h: usize, out_w: usize) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.channels, out_h, out_w);
        for cy in 0..out_h {
            let (y0, y1) = block_range(cy, out_h, self.height);
            for cx in 0..out_w {
                let (x0, x1) = block_range(cx, out_w, self.width);
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                for c in 0..self.channels {
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += self.get(c, y, x);
                        }
                    }
                    out.set(c, cy, cx, acc / n);
                }
            }
        }
        out
    }

    /// Luminance-like channel mean, as a single-channel map.
    pub fn channel_mean(&self) -> FeatureMap {
        let n = self.pixels();
        let mut out = FeatureMap::zeros(1, self.height, self.width);
        for p in 0..n {
            let s: f64 = (0..self.channels).map(|c| self.at(c, p)).sum();
            *out.at_mut(0, p) = s / self.channels as f64;
        }
        out
    }

    /// Zero every location where `mask` is a hole.
    pub fn masked(&self, mask: &Mask) -> FeatureMap {
        let mut out = self.clone();
        for p in 0..self.pixels() {
            if !mask.at(p) {
                for c in 0..self.channels {
                    *out.at_mut(c, p) = 0.0;
                }
            }
        }
        out
    }
}

/// Integer block `[i*total/cells, (i+1)*total/cells)`, never empty.
pub(crate) fn block_range(i: usize, cells: usize, total: usize) -> (usize, usize) {
    let a = i * total / cells;
    let b = ((i + 1) * total / cells).max(a + 1).min(total);
    (a.min(total - 1), b)
}

/// Binary validity field. `true` marks a visible pixel, `false` a hole.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, visible: bool) -> Self {
        Self {
            height,
            width,
            data: vec![visible; height * width],
        }
    }

    pub fn visible(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask buffer of {} for {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn at(&self, p: usize) -> bool {
        self.data[p]
    }

    #[inline]
    pub fn set_at(&mut self, p: usize, v: bool) {
        self.data[p] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn count_visible(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn count_holes(&self) -> usize {
        self.data.len() - self.count_visible()
    }

    pub fn hole_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_holes() as f64 / self.data.len() as f64
        }
    }

    pub fn all_visible(&self) -> bool {
        self.data.iter().all(|&v| v)
    }

    pub fn none_visible(&self) -> bool {
        self.data.iter().all(|&v| !v)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        self.zip_with(other, |a, b| a || b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|v| !v).collect(),
            ..*self
        }
    }

    /// True when every visible pixel of `self` is visible in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Real-valued copy (1.0 visible, 0.0 hole) as a single-channel map.
    pub fn to_field(&self) -> FeatureMap {
        FeatureMap {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Conservative downsampling: a cell is visible only if every pixel in
    /// its block is visible.
    pub fn min_downsample(&self, out_h: usize, out_w: usize) -> Mask {
        Mask::from_fn(out_h, out_w, |cy, cx| {
            let (y0, y1) = block_range(cy, out_h, self.height);
            let (x0, x1) = block_range(cx, out_w, self.width);
            (y0..y1).all(|y| (x0..x1).all(|x| self.get(y, x)))
        })
    }

    /// Nearest-neighbour upsampling to `out_h x out_w`.
    pub fn nearest_upsample(&self, out_h: usize, out_w: usize) -> Mask {
        Mask::from_fn(out_h, out_w, |y, x| {
            self.get(y * self.height / out_h, x * self.width / out_w)
        })
    }

    /// Shrink the visible region by a `(2r+1)^2` square (holes grow).
    pub fn erode_visible(&self, r: usize) -> Mask {
        if r == 0 {
            return self.clone();
        }
        let (h, w) = (self.height as isize, self.width as isize);
        let ri = r as isize;
        Mask::from_fn(self.height, self.width, |y, x| {
            let (y, x) = (y as isize, x as isize);
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && yy < h && xx >= 0 && xx < w && !self.get(yy as usize, xx as usize)
                    {
                        return false;
                    }
                }
            }
            true
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_ranges_cover_everything() {
        for total in [7usize, 32, 33, 128] {
            for cells in [1usize, 3, 7, 32] {
                if cells > total {
                    continue;
                }
                let mut covered = 0;
                for i in 0..cells {
                    let (a, b) = block_range(i, cells, total);
                    assert!(b > a);
                    covered += b - a;
                }
                assert_eq!(covered, total);
            }
        }
    }

    #[test]
    fn area_downsample_of_constant_is_constant() {
        let f = FeatureMap::filled(2, 12, 8, 0.25);
        let d = f.area_downsample(3, 4);
        assert!(d.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn min_downsample_is_conservative() {
        let mut m = Mask::visible(8, 8);
        m.set(5, 2, false);
        let d = m.min_downsample(4, 4);
        assert!(!d.get(2, 1));
        assert_eq!(d.count_holes(), 1);
    }

    #[test]
    fn erode_grows_holes() {
        let mut m = Mask::visible(7, 7);
        m.set(3, 3, false);
        let e = m.erode_visible(1);
        assert_eq!(e.count_holes(), 9);
        assert!(e.is_subset_of(&m));
    }
}
