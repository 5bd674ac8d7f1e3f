//! Subcommands of the `vinpaint` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use vinpaint::alignment::{align_pair, grid_loss, AlignInput};
use vinpaint::datagen::{
    frame_file_name, gen_mask_with_fraction, gen_masked_pair, load_frames, load_image, load_mask,
    load_masks, save_frames, save_image, save_mask, save_sequence, translating_video,
    MaskGenParams, ThetaRange, TranslatingVideoParams,
};
use vinpaint::features::FeatureExtractor;
use vinpaint::metrics::{evaluate, TemporalSupport, CSV_HEADER};
use vinpaint::pipeline::{inpaint_video, InpaintConfig};
use vinpaint::rng::GENERATOR_SPEC;
use vinpaint::temporal::{estimate_flow, read_flo, sequence_flows, write_flo, FlowField};
use vinpaint::{AffineParams, Image, Mask};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THETA_FILE: &str = "theta_star.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vinpaint::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("alignment failed: {0}")]
    Align(vinpaint::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Align(_) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Successful completion, possibly with warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Warnings,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Warnings => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vinpaint", version, about = "Deterministic video inpainting")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed; overrides any `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<InpaintConfig> {
        let mut cfg = match &self.config {
            Some(path) => InpaintConfig::parse_text(&read_text(path)?)?,
            None => InpaintConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Complete the holes of a frame sequence.
    Inpaint(InpaintArgs),
    /// Estimate the affine transform between two images.
    Align(AlignArgs),
    /// Estimate backward flow between two frames and write a .flo file.
    Flow(FlowArgs),
    /// Write seeded synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score a predicted sequence against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    /// Directory of numbered RGB frames.
    #[arg(long)]
    pub frames: PathBuf,
    /// Directory of numbered hole masks (nonzero = hole).
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth frames; enables the hole columns of the metrics table.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub reference_mask: Option<PathBuf>,
    #[arg(long)]
    pub target_mask: Option<PathBuf>,
    /// Ground-truth transform to score against.
    #[arg(long)]
    pub theta_star: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub prev: PathBuf,
    #[arg(long)]
    pub cur: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Texture pair related by a random affine transform, with holes.
    Pair {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0.3)]
        max_hole: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Irregular hole mask with a bounded hole fraction.
    Mask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0.05)]
        min_hole: f64,
        #[arg(long, default_value_t = 0.3)]
        max_hole: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Translating texture with a sliding square hole.
    Video {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 48)]
        hole: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    /// Reference flows `%05d.flo`, file `t` mapping frame `t` to `t - 1`.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Directory for metrics.txt and metrics.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

/// Six whitespace-separated parameters, row-major.
pub fn read_theta(path: &Path) -> CliResult<AffineParams> {
    let text = read_text(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let p: [f64; 6] = values.try_into().map_err(|v: Vec<f64>| {
        CliError::Usage(format!(
            "{}: expected 6 values, found {}",
            path.display(),
            v.len()
        ))
    })?;
    Ok(AffineParams(p))
}

pub fn theta_text(theta: &AffineParams) -> String {
    let p: Vec<String> = theta.0.iter().map(|v| v.to_string()).collect();
    format!("{}\n", p.join(" "))
}

/// Runs a parsed command line inside the requested thread pool.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<Outcome> {
    let mut buf = Vec::new();
    let result = match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command, &mut buf))
        }
        None => dispatch(&cli.command, &mut buf),
    };
    emit(out, &String::from_utf8_lossy(&buf))?;
    result
}

/// Parses `args`, runs, reports errors on stderr and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(&cli, &mut stdout) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command, out: &mut Vec<u8>) -> CliResult<Outcome> {
    match cmd {
        Command::Inpaint(a) => cmd_inpaint(a, out),
        Command::Align(a) => cmd_align(a, out),
        Command::Flow(a) => cmd_flow(a, out),
        Command::Synth(s) => cmd_synth(s, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

/// Metrics table under the fixed header; hole columns stay empty without
/// ground truth.
fn metrics_table(metrics: &vinpaint::metrics::MetricReport, with_gt: bool) -> String {
    if with_gt {
        return metrics.to_csv();
    }
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.9}"));
    let mut s = format!("{CSV_HEADER}\n");
    for m in &metrics.frames {
        writeln!(s, "{},,{:.9},{},", m.frame, m.l_valid, cell(m.warp_err)).unwrap();
    }
    s
}

pub fn cmd_inpaint(a: &InpaintArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let cfg = a.config.resolve()?;
    let frames = load_frames(&a.frames)?;
    let masks = load_masks(&a.masks)?;
    let started = std::time::Instant::now();
    let result = inpaint_video(&frames, &masks, &cfg)?;
    let elapsed = started.elapsed();

    let gt = a.gt.as_deref().map(load_frames).transpose()?;
    let reference = gt.as_deref().unwrap_or(&frames);
    let support = match sequence_flows(&result.frames, cfg.flow_levels, cfg.flow_radius) {
        Ok((flows, occlusion)) => Some(TemporalSupport { flows, occlusion }),
        Err(_) => None,
    };
    let metrics = evaluate(&result.frames, reference, &masks, support.as_ref(), None)?;

    save_frames(&result.frames, &a.out.join(vinpaint::datagen::FRAMES_DIR))?;
    let mut manifest = result.report.manifest(&cfg);
    manifest.push_str("\n[metrics]\n");
    if gt.is_some() {
        manifest.push_str(&metrics.to_text());
    } else {
        writeln!(manifest, "l_valid = {:.9}", metrics.l_valid).unwrap();
        writeln!(manifest, "ground_truth = unavailable").unwrap();
    }
    write_file(&a.out.join(MANIFEST_FILE), manifest)?;
    write_file(
        &a.out.join(METRICS_FILE),
        metrics_table(&metrics, gt.is_some()),
    )?;

    let warnings = result.report.warning_count();
    let mut summary = format!(
        "inpainted {} frames into {}\n",
        result.frames.len(),
        a.out.display()
    );
    if let Some(we) = &result.report.warping_error {
        writeln!(summary, "warping_error = {:.9}", we.value).unwrap();
    }
    if let (true, Some(p)) = (gt.is_some(), metrics.psnr_hole) {
        writeln!(summary, "psnr_hole = {p:.6}").unwrap();
    }
    writeln!(summary, "warnings = {warnings}").unwrap();
    emit(out, &summary)?;
    eprintln!("elapsed {:.3}s", elapsed.as_secs_f64());
    for d in &result.report.diagnostics {
        for w in &d.warnings {
            eprintln!("warning: frame {}: {w}", d.frame);
        }
    }
    for (i, e) in &result.report.frame_errors {
        eprintln!("warning: frame {i}: {e}");
    }
    Ok(if warnings > 0 {
        Outcome::Warnings
    } else {
        Outcome::Success
    })
}

fn load_optional_mask(path: Option<&Path>, img: &Image) -> CliResult<Mask> {
    let m = match path {
        Some(p) => load_mask(p)?,
        None => Mask::visible(img.height(), img.width()),
    };
    if !img.same_grid(&m) {
        return Err(CliError::Usage("mask does not match image size".into()));
    }
    Ok(m)
}

pub fn cmd_align(a: &AlignArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let cfg = a.config.resolve()?;
    let r = load_image(&a.reference)?;
    let t = load_image(&a.target)?;
    if !r.same_shape(&t) {
        return Err(CliError::Usage(format!(
            "images differ in size: {}x{} vs {}x{}",
            r.width(),
            r.height(),
            t.width(),
            t.height()
        )));
    }
    let mr = load_optional_mask(a.reference_mask.as_deref(), &r)?;
    let mt = load_optional_mask(a.target_mask.as_deref(), &t)?;
    let star = a.theta_star.as_deref().map(read_theta).transpose()?;

    let fx = FeatureExtractor::new(
        cfg.feature_kind,
        cfg.feature_channels,
        cfg.feature_resolution,
        cfg.seed,
    )?;
    let (rm, tm) = (r.masked(&mr), t.masked(&mt));
    let (fr, ft) = (fx.extract(&rm), fx.extract(&tm));
    let (fmr, fmt) = (fx.mask(&mr), fx.mask(&mt));
    let outcome = align_pair(
        AlignInput {
            features: &fr,
            feature_mask: &fmr,
            image: &rm,
            mask: &mr,
        },
        AlignInput {
            features: &ft,
            feature_mask: &fmt,
            image: &tm,
            mask: &mt,
        },
        &cfg.align_config(),
    )
    .map_err(CliError::Align)?;

    let p: Vec<String> = outcome.theta.0.iter().map(|v| format!("{v:.6}")).collect();
    let mut s = format!("theta = {}\n", p.join(" "));
    if let Some(star) = star {
        let (g, pt) = grid_loss(&outcome.theta, &star, t.height(), t.width());
        writeln!(s, "grid_term = {g:.9}\nparam_term = {pt:.9}").unwrap();
    }
    emit(out, &s)?;
    Ok(Outcome::Success)
}

pub fn cmd_flow(a: &FlowArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let cfg = a.config.resolve()?;
    let prev = load_image(&a.prev)?;
    let cur = load_image(&a.cur)?;
    if !prev.same_shape(&cur) {
        return Err(CliError::Usage("frames differ in size".into()));
    }
    let flow = estimate_flow(&prev, &cur, cfg.flow_levels, cfg.flow_radius)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_flo(&a.out, &flow)?;
    emit(
        out,
        &format!("max_magnitude = {:.6}\n", flow.max_magnitude()),
    )?;
    Ok(Outcome::Success)
}

fn mask_fraction_range(min: f64, max: f64) -> CliResult<(f64, f64)> {
    if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) || min > max {
        return Err(CliError::Usage(format!(
            "invalid hole fraction range [{min}, {max}]"
        )));
    }
    Ok((min, max))
}

pub fn cmd_synth(s: &SynthCommand, out: &mut dyn Write) -> CliResult<Outcome> {
    match s {
        SynthCommand::Pair {
            out: dir,
            size,
            max_hole,
            seed,
        } => {
            mask_fraction_range(0.0, *max_hole)?;
            if *size < 8 {
                return Err(CliError::Usage("pair size must be at least 8".into()));
            }
            let mp = gen_masked_pair(*size, &ThetaRange::default(), *max_hole, *seed)?;
            ensure_dir(dir)?;
            save_image(&mp.pair.a, &dir.join("imgA.png"))?;
            save_image(&mp.pair.b, &dir.join("imgB.png"))?;
            save_mask(&mp.mask_a, &dir.join("maskA.png"))?;
            save_mask(&mp.mask_b, &dir.join("maskB.png"))?;
            write_file(&dir.join(THETA_FILE), theta_text(&mp.pair.theta_star))?;
            write_file(
                &dir.join("synth.txt"),
                format!("kind = pair\nsize = {size}\nmax_hole = {max_hole}\nseed = {seed}\ngenerator = {GENERATOR_SPEC}\n"),
            )?;
            emit(out, &format!("wrote pair to {}\n", dir.display()))?;
        }
        SynthCommand::Mask {
            out: path,
            height,
            width,
            min_hole,
            max_hole,
            seed,
        } => {
            let range = mask_fraction_range(*min_hole, *max_hole)?;
            let params = MaskGenParams {
                seed: *seed,
                ..MaskGenParams::default()
            };
            let m = gen_mask_with_fraction(*height, *width, &params, range)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            save_mask(&m, path)?;
            emit(out, &format!("hole_fraction = {:.6}\n", m.hole_fraction()))?;
        }
        SynthCommand::Video {
            out: dir,
            frames,
            size,
            hole,
            seed,
        } => {
            if *hole >= *size {
                return Err(CliError::Usage(
                    "hole must be smaller than the frame".into(),
                ));
            }
            let defaults = TranslatingVideoParams::default();
            // Keep the default hole placement proportional to the frame.
            let origin = (
                (defaults.hole_origin.0 * *size as i64) / defaults.height as i64,
                (defaults.hole_origin.1 * *size as i64) / defaults.width as i64,
            );
            let p = TranslatingVideoParams {
                height: *size,
                width: *size,
                frames: *frames,
                hole: *hole,
                hole_origin: origin,
                seed: *seed,
                ..defaults
            };
            let v = translating_video(&p)?;
            save_sequence(&v.inputs(), Some(&v.masks), dir)?;
            save_frames(&v.clean, &dir.join("clean"))?;
            write_file(
                &dir.join("synth.txt"),
                format!(
                    "kind = video\nframes = {frames}\nsize = {size}\nhole = {hole}\nhole_origin = {} {}\nhole_velocity = {} {}\ntexture_velocity = {} {}\nseed = {seed}\ngenerator = {GENERATOR_SPEC}\n",
                    p.hole_origin.0, p.hole_origin.1, p.hole_velocity.0, p.hole_velocity.1, p.texture_velocity.0, p.texture_velocity.1
                ),
            )?;
            emit(
                out,
                &format!("wrote {frames} frames to {}\n", dir.display()),
            )?;
        }
    }
    Ok(Outcome::Success)
}

/// Flow files `1..n` from `dir`; `None` unless every file is present.
fn load_reference_flows(dir: &Path, n: usize) -> CliResult<Option<Vec<FlowField>>> {
    let mut flows = Vec::new();
    for t in 1..n {
        let path = dir.join(frame_file_name(t).replace(".png", ".flo"));
        if !path.exists() {
            return Ok(None);
        }
        flows.push(read_flo(&path)?);
    }
    Ok(Some(flows))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<Outcome> {
    let cfg = a.config.resolve()?;
    let pred = load_frames(&a.pred)?;
    let gt = load_frames(&a.gt)?;
    let masks = load_masks(&a.masks)?;
    if pred.len() != gt.len() || masks.len() != gt.len() {
        return Err(CliError::Usage(format!(
            "sequence lengths differ: {} predicted, {} ground truth, {} masks",
            pred.len(),
            gt.len(),
            masks.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(&gt).enumerate() {
        if !p.same_shape(g) || !g.same_grid(&masks[i]) {
            return Err(CliError::Core(vinpaint::Error::Frame {
                index: i,
                message: "prediction, ground truth and mask differ in size".into(),
            }));
        }
    }
    let support = match sequence_flows(&pred, cfg.flow_levels, cfg.flow_radius) {
        Ok((flows, occlusion)) => Some(TemporalSupport { flows, occlusion }),
        Err(_) => None,
    };
    let reference = match &a.flows {
        Some(dir) => load_reference_flows(dir, pred.len())?,
        None => None,
    };
    let report = evaluate(&pred, &gt, &masks, support.as_ref(), reference.as_deref())?;
    let text = report.to_text();
    emit(out, &text)?;
    if let Some(dir) = &a.out {
        write_file(&dir.join("metrics.txt"), &text)?;
        write_file(&dir.join(METRICS_FILE), report.to_csv())?;
    }
    Ok(Outcome::Success)
}
