//! Fixed, non-learned feature extractors mapping an RGB frame to a
//! `c x r x r` feature map, together with the matching downsampled mask.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Image, Mask};
use crate::rng::{domain, SeedTree};

const CONV_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Mean-pooled RGB over the 3x3 cell neighbourhood, locally
    /// mean-centred (27 channels).
    PooledPatch,
    /// Seeded bank of zero-mean 5x5 RGB filters with ReLU, evaluated at twice
    /// the feature resolution and 2x2 average pooled.
    RandomConv,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::PooledPatch => "pooled_patch",
            FeatureKind::RandomConv => "random_conv",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled_patch" => Ok(FeatureKind::PooledPatch),
            "random_conv" => Ok(FeatureKind::RandomConv),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    kind: FeatureKind,
    resolution: usize,
    /// `channels x 3 x 5 x 5`, only for [`FeatureKind::RandomConv`].
    filters: Vec<f64>,
    channels: usize,
}

impl FeatureExtractor {
    pub fn new(kind: FeatureKind, channels: usize, resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "feature resolution {resolution} < 2"
            )));
        }
        match kind {
            FeatureKind::PooledPatch => Ok(Self {
                kind,
                resolution,
                filters: Vec::new(),
                channels: 27,
            }),
            FeatureKind::RandomConv => {
                if channels == 0 {
                    return Err(Error::InvalidParameter(
                        "feature channel count must be positive".into(),
                    ));
                }
                let taps = 3 * (2 * CONV_RADIUS + 1).pow(2);
                let mut rng = SeedTree::new(seed).stream(domain::FEATURES, 0);
                let mut filters = Vec::with_capacity(channels * taps);
                for _ in 0..channels {
                    let w: Vec<f64> = (0..taps).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mean = w.iter().sum::<f64>() / taps as f64;
                    let norm = w
                        .iter()
                        .map(|v| (v - mean).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-12);
                    filters.extend(w.iter().map(|v| (v - mean) / norm));
                }
                Ok(Self {
                    kind,
                    resolution,
                    filters,
                    channels,
                })
            }
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn extract(&self, img: &Image) -> FeatureMap {
        match self.kind {
            FeatureKind::PooledPatch => self.pooled_patch(img),
            FeatureKind::RandomConv => self.random_conv(img),
        }
    }

    /// Feature-level validity: a cell is visible only if every pixel its
    /// feature depends on is visible.
    pub fn mask(&self, m: &Mask) -> Mask {
        let r = self.resolution;
        match self.kind {
            FeatureKind::PooledPatch => m.min_downsample(r, r).erode_visible(1),
            FeatureKind::RandomConv => m
                .min_downsample(2 * r, 2 * r)
                .erode_visible(CONV_RADIUS)
                .min_downsample(r, r),
        }
    }

    fn pooled_patch(&self, img: &Image) -> FeatureMap {
        let r = self.resolution;
        let pooled = img.area_downsample(r, r);
        let ch = pooled.channels();
        let mut out = FeatureMap::zeros(9 * ch, r, r);
        for y in 0..r {
            for x in 0..r {
                let mut vals = Vec::with_capacity(9 * ch);
                for c in 0..ch {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let yy = (y as isize + dy).clamp(0, r as isize - 1) as usize;
                            let xx = (x as isize + dx).clamp(0, r as isize - 1) as usize;
                            vals.push(pooled.get(c, yy, xx));
                        }
                    }
                }
                for c in 0..ch {
                    let block = &mut vals[c * 9..(c + 1) * 9];
                    let mean = block.iter().sum::<f64>() / 9.0;
                    block.iter_mut().for_each(|v| *v -= mean);
                }
                out.set_vector(y * r + x, &vals);
            }
        }
        out
    }

    fn random_conv(&self, img: &Image) -> FeatureMap {
        let r2 = 2 * self.resolution;
        let pooled = img.area_downsample(r2, r2);
        let k = 2 * CONV_RADIUS + 1;
        let taps = pooled.channels() * k * k;
        let mut response = FeatureMap::zeros(self.channels, r2, r2);
        let mut patch = vec![0.0; taps];
        for y in 0..r2 {
            for x in 0..r2 {
                let mut t = 0;
                for c in 0..pooled.channels() {
                    for dy in 0..k {
                        let yy = (y + dy).saturating_sub(CONV_RADIUS).min(r2 - 1);
                        for dx in 0..k {
                            let xx = (x + dx).saturating_sub(CONV_RADIUS).min(r2 - 1);
                            patch[t] = pooled.get(c, yy, xx);
                            t += 1;
                        }
                    }
                }
                for f in 0..self.channels {
                    let w = &self.filters[f * taps..(f + 1) * taps];
                    let v: f64 = w.iter().zip(&patch).map(|(a, b)| a * b).sum();
                    response.set(f, y, x, v.max(0.0));
                }
            }
        }
        response.area_downsample(self.resolution, self.resolution)
    }
}
