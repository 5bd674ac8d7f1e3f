use std::fmt::Write as _;
use std::str::FromStr;

use crate::alignment::AlignConfig;
use crate::attention::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::temporal::{
    COMPOSITION_SIGMA, DEFAULT_LEVELS, DEFAULT_RADIUS, OCCLUSION_ALPHA, OCCLUSION_BETA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackMode {
    /// Iterative 8-neighbour mean diffusion from the known pixels.
    Diffusion,
    /// Constant mid-grey.
    Constant,
}

impl FromStr for FallbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(FallbackMode::Diffusion),
            "constant" => Ok(FallbackMode::Constant),
            other => Err(Error::Config(format!("unknown fallback mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for FallbackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FallbackMode::Diffusion => "diffusion",
            FallbackMode::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintConfig {
    pub stride: usize,
    pub max_refs: usize,
    pub feature_kind: FeatureKind,
    /// Channel count of the random filter bank; pooled patches always
    /// have 27.
    pub feature_channels: usize,
    pub feature_resolution: usize,
    pub correlation_temperature: f64,
    pub min_confidence: f64,
    pub ransac_iters: usize,
    pub ransac_threshold: f64,
    pub gn_max_iters: usize,
    pub gn_tol: f64,
    pub attention_temperature: f64,
    pub flow_levels: usize,
    pub flow_radius: usize,
    pub occlusion_alpha: f64,
    pub occlusion_beta: f64,
    pub composition_sigma: f64,
    pub fallback: FallbackMode,
    pub recurrence: bool,
    pub seed: u64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        let align = AlignConfig::default();
        Self {
            stride: 10,
            max_refs: 8,
            feature_kind: FeatureKind::PooledPatch,
            feature_channels: 16,
            feature_resolution: 32,
            correlation_temperature: align.correlation_temperature,
            min_confidence: align.min_confidence,
            ransac_iters: align.ransac_iters,
            ransac_threshold: align.ransac_threshold,
            gn_max_iters: align.gn_max_iters,
            gn_tol: align.gn_tol,
            attention_temperature: DEFAULT_TEMPERATURE,
            flow_levels: DEFAULT_LEVELS,
            flow_radius: DEFAULT_RADIUS,
            occlusion_alpha: OCCLUSION_ALPHA,
            occlusion_beta: OCCLUSION_BETA,
            composition_sigma: COMPOSITION_SIGMA,
            fallback: FallbackMode::Diffusion,
            recurrence: true,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl InpaintConfig {
    /// Every recognized key, in manifest order.
    pub const KEYS: [&'static str; 20] = [
        "stride",
        "max_refs",
        "feature_kind",
        "feature_channels",
        "feature_resolution",
        "correlation_temperature",
        "min_confidence",
        "ransac_iters",
        "ransac_threshold",
        "gn_max_iters",
        "gn_tol",
        "attention_temperature",
        "flow_levels",
        "flow_radius",
        "occlusion_alpha",
        "occlusion_beta",
        "composition_sigma",
        "fallback",
        "recurrence",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "stride" => self.stride = parse(key, v)?,
            "max_refs" => self.max_refs = parse(key, v)?,
            "feature_kind" => self.feature_kind = v.parse()?,
            "feature_channels" => self.feature_channels = parse(key, v)?,
            "feature_resolution" => self.feature_resolution = parse(key, v)?,
            "correlation_temperature" => self.correlation_temperature = parse(key, v)?,
            "min_confidence" => self.min_confidence = parse(key, v)?,
            "ransac_iters" => self.ransac_iters = parse(key, v)?,
            "ransac_threshold" => self.ransac_threshold = parse(key, v)?,
            "gn_max_iters" => self.gn_max_iters = parse(key, v)?,
            "gn_tol" => self.gn_tol = parse(key, v)?,
            "attention_temperature" => self.attention_temperature = parse(key, v)?,
            "flow_levels" => self.flow_levels = parse(key, v)?,
            "flow_radius" => self.flow_radius = parse(key, v)?,
            "occlusion_alpha" => self.occlusion_alpha = parse(key, v)?,
            "occlusion_beta" => self.occlusion_beta = parse(key, v)?,
            "composition_sigma" => self.composition_sigma = parse(key, v)?,
            "fallback" => self.fallback = v.parse()?,
            "recurrence" => self.recurrence = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Reads `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_text(text: &str) -> Result<InpaintConfig> {
        let mut cfg = InpaintConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "stride" => self.stride.to_string(),
            "max_refs" => self.max_refs.to_string(),
            "feature_kind" => self.feature_kind.to_string(),
            "feature_channels" => self.feature_channels.to_string(),
            "feature_resolution" => self.feature_resolution.to_string(),
            "correlation_temperature" => self.correlation_temperature.to_string(),
            "min_confidence" => self.min_confidence.to_string(),
            "ransac_iters" => self.ransac_iters.to_string(),
            "ransac_threshold" => self.ransac_threshold.to_string(),
            "gn_max_iters" => self.gn_max_iters.to_string(),
            "gn_tol" => self.gn_tol.to_string(),
            "attention_temperature" => self.attention_temperature.to_string(),
            "flow_levels" => self.flow_levels.to_string(),
            "flow_radius" => self.flow_radius.to_string(),
            "occlusion_alpha" => self.occlusion_alpha.to_string(),
            "occlusion_beta" => self.occlusion_beta.to_string(),
            "composition_sigma" => self.composition_sigma.to_string(),
            "fallback" => self.fallback.to_string(),
            "recurrence" => self.recurrence.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Effective configuration as `key = value` lines; parses back to an
    /// identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            writeln!(s, "{key} = {}", self.get(key).expect("known key")).unwrap();
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be positive, got {v}")))
            }
        };
        if self.stride == 0 {
            return Err(Error::Config("`stride` must be at least 1".into()));
        }
        if self.max_refs == 0 {
            return Err(Error::Config("`max_refs` must be at least 1".into()));
        }
        if self.feature_resolution < 2 {
            return Err(Error::Config(
                "`feature_resolution` must be at least 2".into(),
            ));
        }
        if self.feature_channels == 0 {
            return Err(Error::Config(
                "`feature_channels` must be at least 1".into(),
            ));
        }
        if self.flow_levels == 0 {
            return Err(Error::Config("`flow_levels` must be at least 1".into()));
        }
        positive("correlation_temperature", self.correlation_temperature)?;
        positive("ransac_threshold", self.ransac_threshold)?;
        positive("attention_temperature", self.attention_temperature)?;
        positive("composition_sigma", self.composition_sigma)?;
        positive("gn_tol", self.gn_tol)?;
        if !(self.occlusion_alpha >= 0.0 && self.occlusion_beta >= 0.0) {
            return Err(Error::Config(
                "occlusion thresholds must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config("`min_confidence` must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            correlation_temperature: self.correlation_temperature,
            min_confidence: self.min_confidence,
            ransac_iters: self.ransac_iters,
            ransac_threshold: self.ransac_threshold,
            gn_max_iters: self.gn_max_iters,
            gn_tol: self.gn_tol,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = InpaintConfig::default();
        cfg.set("seed", "42").unwrap();
        cfg.set("fallback", "constant").unwrap();
        cfg.set("recurrence", "false").unwrap();
        cfg.set("gn_tol", "1e-9").unwrap();
        assert_eq!(InpaintConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let err = InpaintConfig::parse_text("strid = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key `strid`"), "{err}");
        assert!(InpaintConfig::parse_text("stride = 0").is_err());
        assert!(InpaintConfig::parse_text("stride = x").is_err());
        assert!(InpaintConfig::default().apply_override("stride").is_err());
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = InpaintConfig::parse_text("# comment\n\nstride = 5\nmax_refs=2\n").unwrap();
        assert_eq!((cfg.stride, cfg.max_refs), (5, 2));
        let mut c = cfg.clone();
        c.apply_override("feature_kind=random_conv").unwrap();
        assert_eq!(c.feature_kind, FeatureKind::RandomConv);
    }
}
