//! Warping references onto the target, distance-based temporal softmax
//! pooling, and the coarse fill with its borrowed-region mask.

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Mask};
use crate::geometry::{affine_grid, bilinear_sample, warp_mask, AffineParams};

/// Floor on per-frame distances.
pub const DISTANCE_FLOOR: f64 = 1e-4;
/// Overlap counts below this are treated as this many pixels when
/// normalizing distances.
pub const MIN_NORMALIZING_OVERLAP: usize = 16;

/// References warped into the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStack {
    pub frames: Vec<FeatureMap>,
    /// Each mask is contained in the in-bounds region of its warp.
    pub masks: Vec<Mask>,
}

impl AlignedStack {
    pub fn new(frames: Vec<FeatureMap>, masks: Vec<Mask>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("aligned stack"));
        }
        if frames.len() != masks.len() {
            return Err(Error::LengthMismatch {
                what: "aligned frames and masks",
                left: frames.len(),
                right: masks.len(),
            });
        }
        let first = &frames[0];
        if frames
            .iter()
            .zip(&masks)
            .any(|(f, m)| !f.same_shape(first) || !f.same_grid(m))
        {
            return Err(Error::ShapeMismatch(
                "aligned stack entries differ in shape".into(),
            ));
        }
        Ok(Self { frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Same stack with frames in the order given by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> AlignedStack {
        AlignedStack {
            frames: perm.iter().map(|&i| self.frames[i].clone()).collect(),
            masks: perm.iter().map(|&i| self.masks[i].clone()).collect(),
        }
    }
}

/// Warps every reference with its transform (target to reference
/// coordinates). The output grid matches the input grid.
pub fn align_references(
    refs: &[FeatureMap],
    masks: &[Mask],
    thetas: &[AffineParams],
) -> Result<AlignedStack> {
    if refs.len() != masks.len() {
        return Err(Error::LengthMismatch {
            what: "references and masks",
            left: refs.len(),
            right: masks.len(),
        });
    }
    if refs.len() != thetas.len() {
        return Err(Error::LengthMismatch {
            what: "references and transforms",
            left: refs.len(),
            right: thetas.len(),
        });
    }
    let mut frames = Vec::with_capacity(refs.len());
    let mut warped_masks = Vec::with_capacity(refs.len());
    for ((f, m), theta) in refs.iter().zip(masks).zip(thetas) {
        if !f.same_grid(m) {
            return Err(Error::ShapeMismatch(
                "reference and mask differ in size".into(),
            ));
        }
        let grid = affine_grid(theta, f.height(), f.width())?;
        let (warped, inb) = bilinear_sample(f, &grid)?;
        frames.push(warped);
        warped_masks.push(warp_mask(m, &grid)?.and(&inb));
    }
    AlignedStack::new(frames, warped_masks)
}

/// Per-frame distances and the per-pixel temporal weight volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWeights {
    /// `w_i`; `+inf` marks a frame with no overlap.
    pub frame_weights: Vec<f64>,
    height: usize,
    width: usize,
    /// `n x h x w`, frame-major.
    volume: Vec<f64>,
}

impl TemporalWeights {
    pub fn frames(&self) -> usize {
        self.frame_weights.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Weight of frame `i` at flat pixel `p`.
    #[inline]
    pub fn at(&self, i: usize, p: usize) -> f64 {
        self.volume[i * self.height * self.width + p]
    }

    /// Plane of weights for frame `i`.
    pub fn plane(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.volume[i * n..(i + 1) * n]
    }
}

/// Overlap-normalized L2 distance between the target and an aligned
/// reference, floored at [`DISTANCE_FLOOR`]; `+inf` with no overlap.
pub fn frame_weight(x_t: &FeatureMap, m_t: &Mask, x_r: &FeatureMap, m_r: &Mask) -> f64 {
    let mut sq = 0.0;
    let mut count = 0usize;
    for p in 0..m_t.len() {
        if m_t.at(p) && m_r.at(p) {
            count += 1;
            for c in 0..x_t.channels() {
                sq += (x_t.at(c, p) - x_r.at(c, p)).powi(2);
            }
        }
    }
    if count == 0 {
        return f64::INFINITY;
    }
    let d = sq.sqrt() / (count.max(MIN_NORMALIZING_OVERLAP) as f64).sqrt();
    d.max(DISTANCE_FLOOR)
}

/// Frame weights and the masked softmax over frames of `m_i(p) / w_i`.
pub fn alignment_weights(
    x_t: &FeatureMap,
    m_t: &Mask,
    stack: &AlignedStack,
) -> Result<TemporalWeights> {
    let (h, w) = (stack.height(), stack.width());
    if !x_t.same_shape(&stack.frames[0]) || !x_t.same_grid(m_t) {
        return Err(Error::ShapeMismatch(
            "target and aligned stack differ in shape".into(),
        ));
    }
    let frame_weights: Vec<f64> = stack
        .frames
        .iter()
        .zip(&stack.masks)
        .map(|(x_r, m_r)| frame_weight(x_t, m_t, x_r, m_r))
        .collect();
    let n = stack.len();
    let mut volume = vec![0.0; n * h * w];
    let mut scores = vec![f64::NEG_INFINITY; n];
    for p in 0..h * w {
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            scores[i] = if stack.masks[i].at(p) && frame_weights[i].is_finite() {
                1.0 / frame_weights[i]
            } else {
                f64::NEG_INFINITY
            };
            best = best.max(scores[i]);
        }
        if best == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for i in 0..n {
            if scores[i] > f64::NEG_INFINITY {
                let e = (scores[i] - best).exp();
                volume[i * h * w + p] = e;
                total += e;
            }
        }
        for i in 0..n {
            volume[i * h * w + p] /= total;
        }
    }
    Ok(TemporalWeights {
        frame_weights,
        height: h,
        width: w,
        volume,
    })
}

/// `sum_i A_i(p) x_i(p)` and the union of the aligned masks.
pub fn temporal_aggregate(
    stack: &AlignedStack,
    weights: &TemporalWeights,
) -> Result<(FeatureMap, Mask)> {
    if weights.frames() != stack.len() {
        return Err(Error::LengthMismatch {
            what: "weights and aligned frames",
            left: weights.frames(),
            right: stack.len(),
        });
    }
    if (weights.height(), weights.width()) != (stack.height(), stack.width()) {
        return Err(Error::ShapeMismatch(
            "weights and aligned stack differ in size".into(),
        ));
    }
    let first = &stack.frames[0];
    let mut out = FeatureMap::zeros(first.channels(), first.height(), first.width());
    for (i, frame) in stack.frames.iter().enumerate() {
        let a = weights.plane(i);
        for c in 0..frame.channels() {
            for ((o, &x), &wgt) in out.plane_mut(c).iter_mut().zip(frame.plane(c)).zip(a) {
                if wgt != 0.0 {
                    *o += wgt * x;
                }
            }
        }
    }
    let union = stack.masks[1..]
        .iter()
        .fold(stack.masks[0].clone(), |acc, m| acc.or(m));
    Ok((out, union))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFill {
    pub x_hat: FeatureMap,
    /// Hole pixels filled by borrowing from references.
    pub m_hat: Mask,
    /// Hole pixels no reference could fill (true = unfilled hole). Their
    /// value in `x_hat` is zero.
    pub residual_hole: Mask,
}

/// Keeps visible target pixels and fills borrowable hole pixels from the
/// aggregate.
pub fn compose_coarse(
    x_t: &FeatureMap,
    m_t: &Mask,
    x_hat_r: &FeatureMap,
    union: &Mask,
) -> Result<CoarseFill> {
    if !x_t.same_shape(x_hat_r) || !x_t.same_grid(m_t) || !m_t.same_shape(union) {
        return Err(Error::ShapeMismatch(
            "coarse fill operands differ in shape".into(),
        ));
    }
    let hole = m_t.not();
    let m_hat = hole.and(union);
    let residual_hole = hole.and(&union.not());
    let mut x_hat = FeatureMap::zeros(x_t.channels(), x_t.height(), x_t.width());
    for p in 0..m_t.len() {
        let src = if m_t.at(p) {
            Some(x_t)
        } else if m_hat.at(p) {
            Some(x_hat_r)
        } else {
            None
        };
        if let Some(src) = src {
            for c in 0..x_t.channels() {
                *x_hat.at_mut(c, p) = src.at(c, p);
            }
        }
    }
    Ok(CoarseFill {
        x_hat,
        m_hat,
        residual_hole,
    })
}
