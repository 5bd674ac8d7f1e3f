//! Naive fillers used as comparison points.

use super::config::FallbackMode;
use super::decode::fallback_fill;
use crate::error::{Error, Result};
use crate::field::{Image, Mask};

fn check(frames: &[Image], masks: &[Mask]) -> Result<()> {
    if frames.len() != masks.len() {
        return Err(Error::LengthMismatch {
            what: "frames and masks",
            left: frames.len(),
            right: masks.len(),
        });
    }
    if frames.iter().zip(masks).any(|(f, m)| !f.same_grid(m)) {
        return Err(Error::ShapeMismatch("frame and mask differ in size".into()));
    }
    Ok(())
}

/// Each frame's hole diffused from its own visible pixels.
pub fn diffusion_only(frames: &[Image], masks: &[Mask]) -> Result<Vec<Image>> {
    check(frames, masks)?;
    frames
        .iter()
        .zip(masks)
        .map(|(f, m)| {
            let mut out = f.masked(m);
            fallback_fill(&mut out, m, FallbackMode::Diffusion)?;
            Ok(out)
        })
        .collect()
}

/// Hole pixels copied from the co-located pixel of the previous output;
/// the first frame is diffused.
pub fn copy_previous(frames: &[Image], masks: &[Mask]) -> Result<Vec<Image>> {
    check(frames, masks)?;
    let mut out: Vec<Image> = Vec::with_capacity(frames.len());
    for (f, m) in frames.iter().zip(masks) {
        let mut cur = f.masked(m);
        match out.last() {
            Some(prev) if prev.same_shape(f) => {
                for p in 0..m.len() {
                    if !m.at(p) {
                        cur.set_vector(p, &prev.vector(p));
                    }
                }
            }
            _ => fallback_fill(&mut cur, m, FallbackMode::Diffusion)?,
        }
        out.push(cur);
    }
    Ok(out)
}
