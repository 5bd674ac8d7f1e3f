use super::masks::dilate_mask;
use super::texture::ProceduralTexture;
use crate::error::{Error, Result};
use crate::field::{Image, Mask};

/// A translating procedural texture with a rectangular hole sliding across it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslatingVideoParams {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Side length of the square hole, pixels.
    pub hole: usize,
    /// Top-left corner of the hole in frame 0, `(row, col)`.
    pub hole_origin: (i64, i64),
    /// Hole displacement per frame, `(rows, cols)`.
    pub hole_velocity: (i64, i64),
    /// Texture coordinate offset per frame, `(rows, cols)`.
    pub texture_velocity: (i64, i64),
    pub seed: u64,
}

impl Default for TranslatingVideoParams {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            frames: 24,
            hole: 48,
            hole_origin: (40, 16),
            hole_velocity: (0, 2),
            texture_velocity: (1, 3),
            seed: 7,
        }
    }
}

/// Ground-truth frames and their hole masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub clean: Vec<Image>,
    pub masks: Vec<Mask>,
}

impl SyntheticVideo {
    /// Frames with hole pixels zeroed, as handed to an inpainter.
    pub fn inputs(&self) -> Vec<Image> {
        self.clean
            .iter()
            .zip(&self.masks)
            .map(|(f, m)| f.masked(m))
            .collect()
    }
}

pub fn translating_video(p: &TranslatingVideoParams) -> Result<SyntheticVideo> {
    if p.frames == 0 || p.height < 2 || p.width < 2 {
        return Err(Error::InvalidParameter(
            "video needs at least one frame of 2x2 pixels".into(),
        ));
    }
    let travel = (p.frames as i64 - 1) * p.texture_velocity.0.abs().max(p.texture_velocity.1.abs());
    let extent = p.height.max(p.width) as f64 + travel as f64;
    let texture = ProceduralTexture::new(p.seed, extent);
    let mut clean = Vec::with_capacity(p.frames);
    let mut masks = Vec::with_capacity(p.frames);
    for t in 0..p.frames as i64 {
        let (dy, dx) = (p.texture_velocity.0 * t, p.texture_velocity.1 * t);
        clean.push(texture.render(p.height, p.width, dx as f64, dy as f64));
        let (y0, x0) = (
            p.hole_origin.0 + p.hole_velocity.0 * t,
            p.hole_origin.1 + p.hole_velocity.1 * t,
        );
        let side = p.hole as i64;
        masks.push(Mask::from_fn(p.height, p.width, |y, x| {
            let (y, x) = (y as i64, x as i64);
            !(y >= y0 && y < y0 + side && x >= x0 && x < x0 + side)
        }));
    }
    Ok(SyntheticVideo { clean, masks })
}

/// Index into a sequence of length `n` that tiles by reflection:
/// `0, 1, .., n-1, n-2, .., 1, 0, 1, ..`.
pub fn reflect_index(t: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = t % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// Pairs ground-truth frames with hole masks derived from a foreground mask
/// sequence (foreground marked as hole). Foreground masks are tiled by
/// reflection to the video length and dilated by `dilation`.
pub fn composite_eval_video(
    frames: &[Image],
    fg_masks: &[Mask],
    dilation: usize,
) -> Result<SyntheticVideo> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("frames"));
    }
    if fg_masks.is_empty() {
        return Err(Error::EmptyInput("foreground masks"));
    }
    let masks = (0..frames.len())
        .map(|t| {
            let fg = &fg_masks[reflect_index(t, fg_masks.len())];
            if !frames[t].same_grid(fg) {
                return Err(Error::Frame {
                    index: t,
                    message: "foreground mask size differs from frame".into(),
                });
            }
            Ok(dilate_mask(fg, dilation))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticVideo {
        clean: frames.to_vec(),
        masks,
    })
}
