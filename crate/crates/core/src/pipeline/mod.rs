//! Frame-by-frame orchestration: reference selection, alignment,
//! aggregation, attention, pixel decode and the recurrent blend.

mod baselines;
mod config;
mod decode;

pub use baselines::{copy_previous, diffusion_only};
pub use config::{FallbackMode, InpaintConfig};
pub use decode::{fallback_fill, pixel_decode, DecodeInputs, Decoded, CONSTANT_FILL};

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::aggregation::{align_references, alignment_weights, compose_coarse, temporal_aggregate};
use crate::alignment::{align_pair, AlignInput};
use crate::attention::{build_attention_operands, nonlocal_refine_detailed};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::field::{FeatureMap, Image, Mask};
use crate::geometry::{affine_grid, bilinear_sample, warp_mask, AffineParams};
use crate::rng::{domain, SeedTree, GENERATOR_SPEC};
use crate::temporal::{
    backward_warp, blend_final, composition_mask, estimate_flow, occlusion_mask, sequence_flows,
    warping_error, FlowField, WarpingError,
};

/// `{0, s, 2s, ..} \ {t}` restricted to the `max_refs` nearest in time
/// (earlier frame first on ties), returned in increasing order.
pub fn build_reference_set(num_frames: usize, t: usize, cfg: &InpaintConfig) -> Result<Vec<usize>> {
    if num_frames == 0 {
        return Err(Error::EmptyInput("video"));
    }
    if t >= num_frames {
        return Err(Error::InvalidParameter(format!(
            "frame {t} outside a {num_frames}-frame video"
        )));
    }
    if cfg.stride == 0 || cfg.max_refs == 0 {
        return Err(Error::Config(
            "stride and max_refs must be at least 1".into(),
        ));
    }
    let mut refs: Vec<usize> = (0..num_frames)
        .step_by(cfg.stride)
        .filter(|&i| i != t)
        .collect();
    refs.sort_by_key(|&i| (i.abs_diff(t), i));
    refs.truncate(cfg.max_refs);
    refs.sort_unstable();
    Ok(refs)
}

/// Recurrence memory carried between frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameState {
    pub prev: Option<Image>,
    pub prev2: Option<Image>,
    /// Backward flow used for the previous frame's blend.
    pub prev_flow: Option<FlowField>,
    /// Residual-hole pixel counts of earlier frames.
    pub residual_history: Vec<usize>,
}

impl FrameState {
    fn push(&mut self, out: &Image, flow: Option<FlowField>, residual: usize) {
        self.prev2 = self.prev.take();
        self.prev = Some(out.clone());
        self.prev_flow = flow;
        self.residual_history.push(residual);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDiagnostics {
    pub index: usize,
    pub theta: Option<AffineParams>,
    /// Frame weight `w`; none for dropped references.
    pub weight: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub references: Vec<ReferenceDiagnostics>,
    pub hole_pixels: usize,
    pub borrowed_pixels: usize,
    pub attended_pixels: usize,
    /// Pixels completed by the fallback fill rather than from references.
    pub fallback_pixels: usize,
    pub m_prime_mean: Option<f64>,
    pub recurrence_applied: bool,
    pub warnings: Vec<String>,
}

/// Per-video inputs with cached features.
pub struct VideoContext<'a> {
    pub frames: &'a [Image],
    pub masks: &'a [Mask],
    pub masked: Vec<Image>,
    pub features: Vec<FeatureMap>,
    pub feature_masks: Vec<Mask>,
}

impl<'a> VideoContext<'a> {
    pub fn new(frames: &'a [Image], masks: &'a [Mask], cfg: &InpaintConfig) -> Result<Self> {
        if frames.len() != masks.len() {
            return Err(Error::LengthMismatch {
                what: "frames and masks",
                left: frames.len(),
                right: masks.len(),
            });
        }
        if frames.is_empty() {
            return Err(Error::EmptyInput("video"));
        }
        for (index, (f, m)) in frames.iter().zip(masks).enumerate() {
            if f.channels() != 3 || !f.same_grid(m) || !f.same_shape(&frames[0]) {
                return Err(Error::Frame {
                    index,
                    message: "frame or mask differs in shape from frame 0".into(),
                });
            }
        }
        cfg.validate()?;
        let extractor = FeatureExtractor::new(
            cfg.feature_kind,
            cfg.feature_channels,
            cfg.feature_resolution,
            cfg.seed,
        )?;
        let masked: Vec<Image> = frames.iter().zip(masks).map(|(f, m)| f.masked(m)).collect();
        let features = masked.par_iter().map(|f| extractor.extract(f)).collect();
        let feature_masks = masks.par_iter().map(|m| extractor.mask(m)).collect();
        Ok(Self {
            frames,
            masks,
            masked,
            features,
            feature_masks,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn input(&self, i: usize) -> AlignInput<'_> {
        AlignInput {
            features: &self.features[i],
            feature_mask: &self.feature_masks[i],
            image: &self.masked[i],
            mask: &self.masks[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub image: Image,
    /// Output before the recurrent blend.
    pub raw: Image,
    /// Backward flow from this frame to the previous output, when blended.
    pub flow: Option<FlowField>,
    pub diagnostics: FrameDiagnostics,
}

fn pair_seed(cfg: &InpaintConfig, t: usize, r: usize, n: usize) -> u64 {
    SeedTree::new(cfg.seed)
        .stream(domain::RANSAC, (t * n + r) as u64 + 1)
        .random()
}

/// Completes frame `t` of the video held by `ctx`.
pub fn inpaint_frame(
    ctx: &VideoContext<'_>,
    t: usize,
    state: &FrameState,
    cfg: &InpaintConfig,
) -> Result<FrameOutput> {
    let target = &ctx.frames[t];
    let m_t = &ctx.masks[t];
    let mut diag = FrameDiagnostics {
        frame: t,
        hole_pixels: m_t.count_holes(),
        ..FrameDiagnostics::default()
    };
    if m_t.all_visible() {
        return Ok(FrameOutput {
            image: target.clone(),
            raw: target.clone(),
            flow: None,
            diagnostics: diag,
        });
    }
    let refs = build_reference_set(ctx.len(), t, cfg)?;
    let align_cfg = cfg.align_config();
    let fits: Vec<Result<AffineParams>> = refs
        .par_iter()
        .map(|&r| {
            let pc = crate::alignment::AlignConfig {
                seed: pair_seed(cfg, t, r, ctx.len()),
                ..align_cfg.clone()
            };
            align_pair(ctx.input(r), ctx.input(t), &pc).map(|o| o.theta)
        })
        .collect();
    let mut kept = Vec::new();
    for (&r, fit) in refs.iter().zip(fits) {
        match fit {
            Ok(theta) => kept.push((r, theta)),
            Err(e) => diag.references.push(ReferenceDiagnostics {
                index: r,
                theta: None,
                weight: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let raw = if kept.is_empty() {
        diag.warnings.push(if refs.is_empty() {
            "no reference frames; fallback fill only".to_string()
        } else {
            "all references failed to align; fallback fill only".to_string()
        });
        let mut out = ctx.masked[t].clone();
        fallback_fill(&mut out, m_t, cfg.fallback)?;
        diag.fallback_pixels = diag.hole_pixels;
        out
    } else {
        feature_and_decode(ctx, t, &kept, cfg, &mut diag)?
    };
    diag.references.sort_by_key(|r| r.index);
    if diag.fallback_pixels > 0 && !kept.is_empty() {
        diag.warnings.push(format!(
            "{} pixels completed by fallback fill",
            diag.fallback_pixels
        ));
    }

    let mut image = raw.clone();
    let mut flow = None;
    if cfg.recurrence && t >= 2 {
        if let Some(prev) = &state.prev {
            match blend_with_previous(prev, &raw, cfg) {
                Ok((blended, bw, mean)) => {
                    image = blended;
                    flow = Some(bw);
                    diag.m_prime_mean = Some(mean);
                    diag.recurrence_applied = true;
                }
                Err(e @ Error::InvalidPyramid { .. }) => {
                    diag.warnings.push(format!("recurrence skipped: {e}"))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(FrameOutput {
        image,
        raw,
        flow,
        diagnostics: diag,
    })
}

fn feature_and_decode(
    ctx: &VideoContext<'_>,
    t: usize,
    kept: &[(usize, AffineParams)],
    cfg: &InpaintConfig,
    diag: &mut FrameDiagnostics,
) -> Result<Image> {
    let idx: Vec<usize> = kept.iter().map(|k| k.0).collect();
    let thetas: Vec<AffineParams> = kept.iter().map(|k| k.1).collect();
    let ref_feats: Vec<FeatureMap> = idx.iter().map(|&i| ctx.features[i].clone()).collect();
    let ref_fmasks: Vec<Mask> = idx.iter().map(|&i| ctx.feature_masks[i].clone()).collect();

    let stack = align_references(&ref_feats, &ref_fmasks, &thetas)?;
    let weights = alignment_weights(&ctx.features[t], &ctx.feature_masks[t], &stack)?;
    let (x_hat_r, union) = temporal_aggregate(&stack, &weights)?;
    let coarse = compose_coarse(&ctx.features[t], &ctx.feature_masks[t], &x_hat_r, &union)?;
    let ops = build_attention_operands(&coarse.x_hat, &coarse.m_hat, &ref_feats, &ref_fmasks)?;
    let refinement = nonlocal_refine_detailed(&ops, &coarse.x_hat, cfg.attention_temperature)?;

    let (h, w) = (ctx.frames[t].height(), ctx.frames[t].width());
    let aligned: Vec<(Image, Mask)> = idx
        .par_iter()
        .zip(&thetas)
        .map(|(&i, theta)| {
            let grid = affine_grid(theta, h, w)?;
            let (img, inb) = bilinear_sample(&ctx.masked[i], &grid)?;
            let valid = warp_mask(&ctx.masks[i], &grid)?.and(&inb);
            Ok((img, valid))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&Image, &Mask)> = idx
        .iter()
        .map(|&i| (&ctx.masked[i], &ctx.masks[i]))
        .collect();
    let decoded = pixel_decode(&DecodeInputs {
        target: &ctx.masked[t],
        mask: &ctx.masks[t],
        refs: &refs,
        aligned: &aligned,
        weights: &weights,
        m_hat: &coarse.m_hat,
        ops: &ops,
        refinement: &refinement,
        fallback: cfg.fallback,
    })?;
    for (k, (&i, theta)) in idx.iter().zip(&thetas).enumerate() {
        diag.references.push(ReferenceDiagnostics {
            index: i,
            theta: Some(*theta),
            weight: Some(weights.frame_weights[k]),
            error: None,
        });
    }
    diag.borrowed_pixels = decoded.borrowed.count_visible();
    diag.attended_pixels = decoded.attended.count_visible();
    diag.fallback_pixels = decoded.fallback.count_visible();
    Ok(decoded.image)
}

/// Blends `raw` with `prev` warped by the backward flow between them;
/// returns the blend, the flow and the mean composition weight.
fn blend_with_previous(
    prev: &Image,
    raw: &Image,
    cfg: &InpaintConfig,
) -> Result<(Image, FlowField, f64)> {
    let bw = estimate_flow(prev, raw, cfg.flow_levels, cfg.flow_radius)?;
    let fw = estimate_flow(raw, prev, cfg.flow_levels, cfg.flow_radius)?;
    let occl = occlusion_mask(&fw, &bw, cfg.occlusion_alpha, cfg.occlusion_beta)?;
    let (warped, valid) = backward_warp(prev, &bw)?;
    let m_prime = composition_mask(&warped, raw, &valid, &occl, cfg.composition_sigma)?;
    let mean = m_prime.as_slice().iter().sum::<f64>() / m_prime.pixels() as f64;
    let out = blend_final(raw, prev, &bw, &m_prime)?;
    Ok((out, bw, mean))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub diagnostics: Vec<FrameDiagnostics>,
    /// Frames that failed outright and were completed by the fallback fill.
    pub frame_errors: Vec<(usize, String)>,
    /// Warping error of the output under flows estimated on the output.
    pub warping_error: Option<WarpingError>,
}

impl RunReport {
    pub fn warning_count(&self) -> usize {
        self.frame_errors.len()
            + self
                .diagnostics
                .iter()
                .map(|d| d.warnings.len())
                .sum::<usize>()
    }

    /// Structured text record of the configuration, seed expansion and
    /// per-frame diagnostics.
    pub fn manifest(&self, cfg: &InpaintConfig) -> String {
        let mut s = String::new();
        writeln!(s, "[config]").unwrap();
        s.push_str(&cfg.to_text());
        writeln!(
            s,
            "\n[generator]\nspec = {GENERATOR_SPEC}\nroot_seed = {}",
            cfg.seed
        )
        .unwrap();
        writeln!(s, "\n[run]\nframes = {}", self.diagnostics.len()).unwrap();
        match &self.warping_error {
            Some(we) => writeln!(s, "warping_error = {:.9}", we.value).unwrap(),
            None => writeln!(s, "warping_error = unavailable").unwrap(),
        }
        writeln!(s, "warnings = {}", self.warning_count()).unwrap();
        for d in &self.diagnostics {
            writeln!(s, "\n[frame {}]", d.frame).unwrap();
            writeln!(s, "hole_pixels = {}", d.hole_pixels).unwrap();
            writeln!(s, "borrowed_pixels = {}", d.borrowed_pixels).unwrap();
            writeln!(s, "attended_pixels = {}", d.attended_pixels).unwrap();
            writeln!(s, "fallback_pixels = {}", d.fallback_pixels).unwrap();
            writeln!(s, "recurrence = {}", d.recurrence_applied).unwrap();
            if let Some(m) = d.m_prime_mean {
                writeln!(s, "m_prime_mean = {m:.9}").unwrap();
            }
            for r in &d.references {
                match (&r.theta, &r.error) {
                    (Some(th), _) => {
                        let p: Vec<String> = th.0.iter().map(|v| format!("{v:.6}")).collect();
                        writeln!(
                            s,
                            "ref {} theta = {} w = {:.6e}",
                            r.index,
                            p.join(" "),
                            r.weight.unwrap_or(f64::NAN)
                        )
                        .unwrap();
                    }
                    (None, Some(e)) => writeln!(s, "ref {} dropped = {e}", r.index).unwrap(),
                    (None, None) => {}
                }
            }
            for wn in &d.warnings {
                writeln!(s, "warning = {wn}").unwrap();
            }
        }
        for (i, e) in &self.frame_errors {
            writeln!(s, "\n[error frame {i}]\nmessage = {e}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutput {
    pub frames: Vec<Image>,
    /// Outputs before the recurrent blend.
    pub raw: Vec<Image>,
    pub report: RunReport,
}

/// Sequential pass over the video. A frame that fails is completed by the
/// fallback fill and recorded in the report.
pub fn inpaint_video(frames: &[Image], masks: &[Mask], cfg: &InpaintConfig) -> Result<VideoOutput> {
    let ctx = VideoContext::new(frames, masks, cfg)?;
    let mut state = FrameState::default();
    let mut out = Vec::with_capacity(frames.len());
    let mut raw = Vec::with_capacity(frames.len());
    let mut diagnostics = Vec::with_capacity(frames.len());
    let mut frame_errors = Vec::new();
    for t in 0..frames.len() {
        match inpaint_frame(&ctx, t, &state, cfg) {
            Ok(fo) => {
                state.push(&fo.image, fo.flow, fo.diagnostics.fallback_pixels);
                out.push(fo.image);
                raw.push(fo.raw);
                diagnostics.push(fo.diagnostics);
            }
            Err(e) => {
                let mut img = ctx.masked[t].clone();
                fallback_fill(&mut img, &masks[t], cfg.fallback)?;
                frame_errors.push((t, e.to_string()));
                state.push(&img, None, masks[t].count_holes());
                diagnostics.push(FrameDiagnostics {
                    frame: t,
                    hole_pixels: masks[t].count_holes(),
                    fallback_pixels: masks[t].count_holes(),
                    ..FrameDiagnostics::default()
                });
                raw.push(img.clone());
                out.push(img);
            }
        }
    }
    let warping_error = match sequence_flows(&out, cfg.flow_levels, cfg.flow_radius) {
        Ok((flows, occl)) if out.len() > 1 => Some(warping_error(&out, &flows, &occl)?),
        _ => None,
    };
    Ok(VideoOutput {
        frames: out,
        raw,
        report: RunReport {
            diagnostics,
            frame_errors,
            warping_error,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sets() {
        let cfg = InpaintConfig::default();
        assert_eq!(
            build_reference_set(40, 15, &cfg).unwrap(),
            vec![0, 10, 20, 30]
        );
        assert_eq!(build_reference_set(5, 3, &cfg).unwrap(), vec![0]);
        assert_eq!(build_reference_set(40, 10, &cfg).unwrap(), vec![0, 20, 30]);
        assert_eq!(
            build_reference_set(1, 0, &cfg).unwrap(),
            Vec::<usize>::new()
        );
        let two = InpaintConfig {
            max_refs: 2,
            ..cfg.clone()
        };
        assert_eq!(build_reference_set(100, 47, &two).unwrap(), vec![40, 50]);
        assert!(build_reference_set(0, 0, &cfg).is_err());
    }

    #[test]
    fn hole_free_frames_pass_through() {
        let frames = vec![Image::filled(3, 16, 16, 0.25); 3];
        let masks = vec![Mask::visible(16, 16); 3];
        let out = inpaint_video(&frames, &masks, &InpaintConfig::default()).unwrap();
        assert_eq!(out.frames, frames);
        assert_eq!(out.report.warning_count(), 0);
    }

    #[test]
    fn single_frame_uses_fallback_with_warning() {
        let frames = vec![Image::filled(3, 16, 16, 0.25)];
        let masks = vec![Mask::from_fn(16, 16, |y, x| {
            !(4..8).contains(&y) || !(4..8).contains(&x)
        })];
        let out = inpaint_video(&frames, &masks, &InpaintConfig::default()).unwrap();
        assert!(out.report.diagnostics[0].warnings[0].contains("fallback"));
        assert!(out.frames[0]
            .as_slice()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-9));
    }
}
