use crate::aggregation::TemporalWeights;
use crate::attention::{AttentionOperands, Refinement};
use crate::error::{Error, Result};
use crate::field::{block_range, Image, Mask};

use super::config::FallbackMode;

pub const CONSTANT_FILL: f64 = 0.5;
const DIFFUSION_TOL: f64 = 1e-6;
const DIFFUSION_MAX_SWEEPS: usize = 2000;

/// Fills every pixel with `known = false` from the known ones.
///
/// Diffusion first peels the unknown region inward, giving each pixel the
/// mean of its already-assigned 8-neighbours, then relaxes the interior with
/// Gauss-Seidel 8-neighbour averaging until the largest update falls below
/// `1e-6`. Without any known pixel, or in constant mode, unknown pixels get
/// 0.5.
pub fn fallback_fill(img: &mut Image, known: &Mask, mode: FallbackMode) -> Result<()> {
    if !img.same_grid(known) {
        return Err(Error::ShapeMismatch(
            "fallback mask does not match image".into(),
        ));
    }
    let unknown: Vec<usize> = (0..known.len()).filter(|&p| !known.at(p)).collect();
    if unknown.is_empty() {
        return Ok(());
    }
    if mode == FallbackMode::Constant || known.none_visible() {
        for &p in &unknown {
            for c in 0..img.channels() {
                *img.at_mut(c, p) = CONSTANT_FILL;
            }
        }
        return Ok(());
    }
    let (h, w) = (img.height(), img.width());
    let neighbours = |p: usize| {
        let (y, x) = ((p / w) as i64, (p % w) as i64);
        (-1i64..=1)
            .flat_map(move |dy| (-1i64..=1).map(move |dx| (y + dy, x + dx)))
            .filter(move |&(yy, xx)| {
                (yy, xx) != (y, x) && yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64
            })
            .map(move |(yy, xx)| yy as usize * w + xx as usize)
    };

    let mut assigned = known.clone();
    let mut pending = unknown.clone();
    while !pending.is_empty() {
        let layer: Vec<(usize, Vec<f64>)> = pending
            .iter()
            .filter_map(|&p| {
                let src: Vec<usize> = neighbours(p).filter(|&q| assigned.at(q)).collect();
                if src.is_empty() {
                    return None;
                }
                let mean = (0..img.channels())
                    .map(|c| src.iter().map(|&q| img.at(c, q)).sum::<f64>() / src.len() as f64)
                    .collect();
                Some((p, mean))
            })
            .collect();
        for (p, v) in &layer {
            img.set_vector(*p, v);
            assigned.set_at(*p, true);
        }
        pending.retain(|&p| !assigned.at(p));
    }

    for _ in 0..DIFFUSION_MAX_SWEEPS {
        let mut change = 0.0f64;
        for &p in &unknown {
            let n: Vec<usize> = neighbours(p).collect();
            for c in 0..img.channels() {
                let v = n.iter().map(|&q| img.at(c, q)).sum::<f64>() / n.len() as f64;
                change = change.max((v - img.at(c, p)).abs());
                *img.at_mut(c, p) = v;
            }
        }
        if change < DIFFUSION_TOL {
            break;
        }
    }
    Ok(())
}

/// Cell index of every pixel along an axis of `total` pixels split into
/// `cells` blocks.
fn cell_lookup(cells: usize, total: usize) -> Vec<usize> {
    let mut out = vec![0; total];
    for i in 0..cells {
        let (a, b) = block_range(i, cells, total);
        for o in &mut out[a..b] {
            *o = i;
        }
    }
    out
}

/// Full-resolution inputs of the decode step for one target frame.
#[derive(Debug, Clone, Copy)]
pub struct DecodeInputs<'a> {
    pub target: &'a Image,
    pub mask: &'a Mask,
    /// Unwarped reference frames and masks, in stack order.
    pub refs: &'a [(&'a Image, &'a Mask)],
    /// References warped onto the target and their validity.
    pub aligned: &'a [(Image, Mask)],
    /// Feature-level temporal weights.
    pub weights: &'a TemporalWeights,
    /// Feature-level borrowed region.
    pub m_hat: &'a Mask,
    pub ops: &'a AttentionOperands,
    pub refinement: &'a Refinement,
    pub fallback: FallbackMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub image: Image,
    /// Hole pixels filled from aligned references.
    pub borrowed: Mask,
    /// Hole pixels blended with an attention-retrieved pixel.
    pub attended: Mask,
    /// Hole pixels completed by the fallback fill.
    pub fallback: Mask,
}

/// Applies feature-level temporal weights and attention assignments at full
/// resolution, then completes residual holes with the fallback fill.
pub fn pixel_decode(inp: &DecodeInputs<'_>) -> Result<Decoded> {
    let (h, w) = (inp.target.height(), inp.target.width());
    let n = inp.aligned.len();
    if inp.refs.len() != n || inp.weights.frames() != n {
        return Err(Error::LengthMismatch {
            what: "decode references and weights",
            left: inp.refs.len(),
            right: inp.weights.frames(),
        });
    }
    let (fh, fw) = (inp.weights.height(), inp.weights.width());
    let (rows, cols) = (cell_lookup(fh, h), cell_lookup(fw, w));
    let channels = inp.target.channels();

    let mut image = inp.target.clone();
    let mut borrowed = Mask::filled(h, w, false);
    let mut attended = Mask::filled(h, w, false);
    let mut fallback = Mask::filled(h, w, false);
    let mut known = inp.mask.clone();
    let mut a = vec![0.0; n];
    for p in 0..h * w {
        if inp.mask.at(p) {
            continue;
        }
        let (y, x) = (p / w, p % w);
        let cell = rows[y] * fw + cols[x];

        let mut total = 0.0;
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = if inp.aligned[i].1.at(p) {
                inp.weights.at(i, cell)
            } else {
                0.0
            };
            total += *ai;
        }
        if total == 0.0 {
            // The cell's weights miss this pixel; fall back to the frame
            // weights over the references valid here.
            let best = (0..n)
                .filter(|&i| inp.aligned[i].1.at(p) && inp.weights.frame_weights[i].is_finite())
                .map(|i| 1.0 / inp.weights.frame_weights[i])
                .fold(f64::NEG_INFINITY, f64::max);
            for (i, ai) in a.iter_mut().enumerate() {
                let fwi = inp.weights.frame_weights[i];
                *ai = if inp.aligned[i].1.at(p) && fwi.is_finite() {
                    (1.0 / fwi - best).exp()
                } else {
                    0.0
                };
                total += *ai;
            }
        }
        let coarse: Option<Vec<f64>> = (total > 0.0).then(|| {
            (0..channels)
                .map(|c| {
                    (0..n)
                        .filter(|&i| a[i] != 0.0)
                        .map(|i| a[i] * inp.aligned[i].0.at(c, p))
                        .sum::<f64>()
                        / total
                })
                .collect()
        });

        let retrieved = inp.refinement.argmax[cell]
            .filter(|_| inp.m_hat.at(cell))
            .and_then(|k| {
                let (f, key) = inp.ops.key_location(k);
                let (qy, qx) = (key / fw, key % fw);
                let (cy0, _) = block_range(rows[y], fh, h);
                let (cx0, _) = block_range(cols[x], fw, w);
                let (sy0, sy1) = block_range(qy, fh, h);
                let (sx0, sx1) = block_range(qx, fw, w);
                let sy = (sy0 + (y - cy0)).min(sy1 - 1);
                let sx = (sx0 + (x - cx0)).min(sx1 - 1);
                let (img, m) = inp.refs[f];
                m.get(sy, sx).then(|| {
                    (0..channels)
                        .map(|c| img.get(c, sy, sx))
                        .collect::<Vec<f64>>()
                })
            });

        let value = match (coarse, retrieved) {
            (Some(cv), Some(rv)) => {
                attended.set_at(p, true);
                cv.iter().zip(&rv).map(|(a, b)| 0.5 * (a + b)).collect()
            }
            (Some(cv), None) => cv,
            (None, Some(rv)) => {
                attended.set_at(p, true);
                rv
            }
            (None, None) => {
                fallback.set_at(p, true);
                continue;
            }
        };
        borrowed.set_at(p, true);
        known.set_at(p, true);
        image.set_vector(p, &value);
    }
    for p in 0..h * w {
        if fallback.at(p) {
            for c in 0..channels {
                *image.at_mut(c, p) = 0.0;
            }
        }
    }
    fallback_fill(&mut image, &known, inp.fallback)?;
    Ok(Decoded {
        image,
        borrowed,
        attended,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_boundary_diffuses_to_constant() {
        let mut img = Image::filled(3, 20, 20, 0.3);
        let known = Mask::from_fn(20, 20, |y, x| {
            !(4..16).contains(&y) || !(3..15).contains(&x)
        });
        for p in 0..400 {
            if !known.at(p) {
                img.set_vector(p, &[0.9, 0.0, 0.1]);
            }
        }
        fallback_fill(&mut img, &known, FallbackMode::Diffusion).unwrap();
        assert!(img.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-4));
    }

    #[test]
    fn constant_mode_and_no_known_pixels() {
        let mut img = Image::filled(3, 4, 4, 0.1);
        let known = Mask::from_fn(4, 4, |y, _| y < 2);
        fallback_fill(&mut img, &known, FallbackMode::Constant).unwrap();
        assert_eq!(img.get(0, 3, 3), 0.5);
        assert_eq!(img.get(0, 0, 0), 0.1);
        let mut img = Image::filled(3, 4, 4, 0.1);
        fallback_fill(
            &mut img,
            &Mask::filled(4, 4, false),
            FallbackMode::Diffusion,
        )
        .unwrap();
        assert!(img.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn diffusion_is_linear_between_boundaries() {
        // Left column 0, right column 1: the discrete harmonic solution stays
        // within the boundary range and increases left to right.
        let mut img = Image::from_fn(1, 6, 9, |_, _, x| if x == 8 { 1.0 } else { 0.0 });
        let known = Mask::from_fn(6, 9, |_, x| x == 0 || x == 8);
        fallback_fill(&mut img, &known, FallbackMode::Diffusion).unwrap();
        for y in 0..6 {
            for x in 1..9 {
                assert!(img.get(0, y, x) >= img.get(0, y, x - 1) - 1e-6);
            }
        }
        assert!(img.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cell_lookup_matches_blocks() {
        assert_eq!(cell_lookup(3, 7), vec![0, 0, 1, 1, 2, 2, 2]);
    }
}
