//! Reconstruction and temporal-consistency metrics.
//!
//! All reductions sum absolute differences over channels and average over
//! pixels of the measured support.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::{Image, Mask};
use crate::temporal::{backward_warp, warping_error, FlowField};

/// Reported PSNR for an exact reconstruction.
pub const PSNR_CAP: f64 = 99.0;
pub const CSV_HEADER: &str = "frame,l_hole,l_valid,warp_err,psnr_hole";

fn check(pred: &Image, gt: &Image, m: &Mask) -> Result<()> {
    if !pred.same_shape(gt) || !pred.same_grid(m) {
        return Err(Error::ShapeMismatch(
            "prediction, ground truth and mask differ in shape".into(),
        ));
    }
    Ok(())
}

/// Sum of channel-summed absolute errors and pixel count over pixels whose
/// visibility equals `visible`.
fn masked_l1(pred: &Image, gt: &Image, m: &Mask, visible: bool) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for p in 0..m.len() {
        if m.at(p) == visible {
            count += 1;
            for c in 0..pred.channels() {
                sum += (pred.at(c, p) - gt.at(c, p)).abs();
            }
        }
    }
    (sum, count)
}

fn mean_or_zero((sum, count): (f64, usize)) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean channel-summed L1 error over hole pixels; 0 without holes.
pub fn l_hole(pred: &Image, gt: &Image, m: &Mask) -> Result<f64> {
    check(pred, gt, m)?;
    Ok(mean_or_zero(masked_l1(pred, gt, m, false)))
}

/// Mean channel-summed L1 error over visible pixels; 0 without any.
pub fn l_valid(pred: &Image, gt: &Image, m: &Mask) -> Result<f64> {
    check(pred, gt, m)?;
    Ok(mean_or_zero(masked_l1(pred, gt, m, true)))
}

/// Squared error summed over channels and hole pixels, with the channel
/// sample count.
fn hole_sq(pred: &Image, gt: &Image, m: &Mask) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for p in 0..m.len() {
        if !m.at(p) {
            for c in 0..pred.channels() {
                sum += (pred.at(c, p) - gt.at(c, p)).powi(2);
                count += 1;
            }
        }
    }
    (sum, count)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10 log10(1 / MSE)` over hole pixels, capped at [`PSNR_CAP`].
pub fn psnr_hole(pred: &Image, gt: &Image, m: &Mask) -> Result<f64> {
    check(pred, gt, m)?;
    let (sum, count) = hole_sq(pred, gt, m);
    if count == 0 {
        return Err(Error::UndefinedMetric("PSNR over an empty hole"));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

/// PSNR of the squared error pooled over the holes of a whole sequence.
pub fn sequence_psnr_hole(pred: &[Image], gt: &[Image], masks: &[Mask]) -> Result<f64> {
    check_lengths(pred, gt, masks)?;
    let mut sum = 0.0;
    let mut count = 0;
    for ((p, g), m) in pred.iter().zip(gt).zip(masks) {
        check(p, g, m)?;
        let (s, n) = hole_sq(p, g, m);
        sum += s;
        count += n;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("PSNR over an empty hole"));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

/// `mean|W - W_hat|_1 + mean|Y_t - W_hat(Y_{t-1})|_1`, the flow error
/// against reference flow plus the warped photometric gap.
pub fn flow_metric(
    flow_pred: &FlowField,
    flow_ref: &FlowField,
    gt_t: &Image,
    gt_prev: &Image,
) -> Result<f64> {
    let (h, w) = (flow_pred.height(), flow_pred.width());
    if (flow_ref.height(), flow_ref.width()) != (h, w)
        || (gt_t.height(), gt_t.width()) != (h, w)
        || !gt_t.same_shape(gt_prev)
    {
        return Err(Error::ShapeMismatch(
            "flow metric operands differ in size".into(),
        ));
    }
    let n = (h * w) as f64;
    let flow_term: f64 = (0..h * w)
        .map(|p| {
            let (a, b) = (flow_ref.at(p), flow_pred.at(p));
            (a.0 - b.0).abs() + (a.1 - b.1).abs()
        })
        .sum::<f64>()
        / n;
    let (warped, _) = backward_warp(gt_prev, flow_pred)?;
    let photo: f64 = (0..h * w)
        .map(|p| {
            (0..gt_t.channels())
                .map(|c| (gt_t.at(c, p) - warped.at(c, p)).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(flow_term + photo)
}

fn check_lengths(pred: &[Image], gt: &[Image], masks: &[Mask]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted and ground-truth frames",
            left: pred.len(),
            right: gt.len(),
        });
    }
    if masks.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "masks and frames",
            left: masks.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("metric sequence"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub l_hole: f64,
    pub l_valid: f64,
    /// Gap to the previous frame after flow compensation; none for frame 0.
    pub warp_err: Option<f64>,
    /// None for frames without holes.
    pub psnr_hole: Option<f64>,
}

/// Flows and trust masks for the consecutive pairs of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSupport {
    pub flows: Vec<FlowField>,
    pub occlusion: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    pub l_hole: f64,
    pub l_valid: f64,
    pub warping_error: Option<f64>,
    pub flow_metric: Option<f64>,
    /// Pooled over every hole pixel of the sequence.
    pub psnr_hole: Option<f64>,
    pub weighted_total: f64,
    /// True when a temporal term was unavailable and left out of the total.
    pub partial: bool,
    /// Frames whose trusted warp region was empty.
    pub warp_warnings: Vec<usize>,
}

/// Evaluates a predicted sequence. `temporal` supplies the flows used for
/// the warping error; `reference_flows` enables the flow metric.
pub fn evaluate(
    pred: &[Image],
    gt: &[Image],
    masks: &[Mask],
    temporal: Option<&TemporalSupport>,
    reference_flows: Option<&[FlowField]>,
) -> Result<MetricReport> {
    check_lengths(pred, gt, masks)?;
    let mut frames = Vec::with_capacity(pred.len());
    for (t, ((p, g), m)) in pred.iter().zip(gt).zip(masks).enumerate() {
        frames.push(FrameMetrics {
            frame: t,
            l_hole: l_hole(p, g, m)?,
            l_valid: l_valid(p, g, m)?,
            warp_err: None,
            psnr_hole: if m.all_visible() {
                None
            } else {
                Some(psnr_hole(p, g, m)?)
            },
        });
    }
    let n = pred.len() as f64;
    let mean_hole = frames.iter().map(|f| f.l_hole).sum::<f64>() / n;
    let mean_valid = frames.iter().map(|f| f.l_valid).sum::<f64>() / n;

    let mut warp = None;
    let mut warp_warnings = Vec::new();
    if let Some(ts) = temporal.filter(|_| pred.len() > 1) {
        let we = warping_error(pred, &ts.flows, &ts.occlusion)?;
        for t in 1..pred.len() {
            let single = warping_error(
                &pred[t - 1..=t],
                &ts.flows[t - 1..t],
                &ts.occlusion[t - 1..t],
            )?;
            frames[t].warp_err = Some(single.value);
        }
        warp_warnings = we.empty_frames.clone();
        warp = Some(we.value);
    }

    let mut flow = None;
    if let (Some(ts), Some(rf)) = (temporal, reference_flows) {
        if rf.len() + 1 == pred.len() && pred.len() > 1 {
            let mut total = 0.0;
            for t in 1..pred.len() {
                total += flow_metric(&ts.flows[t - 1], &rf[t - 1], &gt[t], &gt[t - 1])?;
            }
            flow = Some(total / (pred.len() - 1) as f64);
        }
    }

    let psnr = match sequence_psnr_hole(pred, gt, masks) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let weighted_total = 100.0 * mean_hole
        + 50.0 * mean_valid
        + 20.0 * flow.unwrap_or(0.0)
        + 20.0 * warp.unwrap_or(0.0);
    Ok(MetricReport {
        frames,
        l_hole: mean_hole,
        l_valid: mean_valid,
        warping_error: warp,
        flow_metric: flow,
        psnr_hole: psnr,
        weighted_total,
        partial: flow.is_none() || warp.is_none(),
        warp_warnings,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "unavailable".to_string(), |x| format!("{x:.9}"))
}

impl MetricReport {
    /// `key = value` summary lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "l_hole = {:.9}", self.l_hole).unwrap();
        writeln!(s, "l_valid = {:.9}", self.l_valid).unwrap();
        writeln!(s, "warping_error = {}", opt(self.warping_error)).unwrap();
        writeln!(s, "flow_metric = {}", opt(self.flow_metric)).unwrap();
        writeln!(s, "psnr_hole = {}", opt(self.psnr_hole)).unwrap();
        writeln!(s, "weighted_total = {:.9}", self.weighted_total).unwrap();
        writeln!(s, "partial = {}", self.partial).unwrap();
        s
    }

    /// Per-frame table under [`CSV_HEADER`]; missing values are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.9}"));
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for f in &self.frames {
            writeln!(
                s,
                "{},{:.9},{:.9},{},{}",
                f.frame,
                f.l_hole,
                f.l_valid,
                cell(f.warp_err),
                cell(f.psnr_hole)
            )
            .unwrap();
        }
        s
    }
}
