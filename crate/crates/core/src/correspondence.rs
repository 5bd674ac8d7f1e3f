//! Masked cosine correlation between a reference and a target feature map,
//! and its per-target softmax normalization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FeatureMap, Mask};

/// Guard against division by a vanishing channel norm.
pub const NORM_EPS: f64 = 1e-8;

/// Dense `(h_r*w_r) x (h_t*w_t)` matrix. Row `i` is a reference position,
/// column `j` a target position; both flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    ref_shape: (usize, usize),
    tgt_shape: (usize, usize),
    data: Vec<f64>,
}

impl CorrelationMap {
    pub fn zeros(ref_shape: (usize, usize), tgt_shape: (usize, usize)) -> Self {
        Self {
            ref_shape,
            tgt_shape,
            data: vec![0.0; ref_shape.0 * ref_shape.1 * tgt_shape.0 * tgt_shape.1],
        }
    }

    pub fn from_vec(
        ref_shape: (usize, usize),
        tgt_shape: (usize, usize),
        data: Vec<f64>,
    ) -> Result<Self> {
        let m = Self::zeros(ref_shape, tgt_shape);
        if data.len() != m.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "correlation buffer of {} for {}x{}",
                data.len(),
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self { data, ..m })
    }

    pub fn rows(&self) -> usize {
        self.ref_shape.0 * self.ref_shape.1
    }

    pub fn cols(&self) -> usize {
        self.tgt_shape.0 * self.tgt_shape.1
    }

    /// Spatial shape `(h, w)` of the reference (row) grid.
    pub fn ref_shape(&self) -> (usize, usize) {
        self.ref_shape
    }

    /// Spatial shape `(h, w)` of the target (column) grid.
    pub fn tgt_shape(&self) -> (usize, usize) {
        self.tgt_shape
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let cols = self.cols();
        self.data[i * cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// Divides each spatial location's channel vector by `max(norm, 1e-8)`.
pub fn normalize_channels(f: &FeatureMap) -> FeatureMap {
    let mut out = f.clone();
    for p in 0..f.pixels() {
        let norm = (0..f.channels())
            .map(|c| f.at(c, p).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = 1.0 / norm.max(NORM_EPS);
        for c in 0..f.channels() {
            *out.at_mut(c, p) *= scale;
        }
    }
    out
}

/// `C(i, j) = <f_r(i), f_t(j)>` where both positions are visible, else 0.
///
/// Inputs are expected to be channel-normalized already.
pub fn masked_correlation(
    f_r: &FeatureMap,
    m_r: &Mask,
    f_t: &FeatureMap,
    m_t: &Mask,
) -> Result<CorrelationMap> {
    if f_r.channels() != f_t.channels() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} channels, target {}",
            f_r.channels(),
            f_t.channels()
        )));
    }
    if !f_r.same_grid(m_r) || !f_t.same_grid(m_t) {
        return Err(Error::ShapeMismatch(
            "feature map and mask grids differ".into(),
        ));
    }
    let ref_shape = (f_r.height(), f_r.width());
    let tgt_shape = (f_t.height(), f_t.width());
    let (nr, nt, c) = (f_r.pixels(), f_t.pixels(), f_r.channels());

    // Position-major copies keep the inner product contiguous.
    let rv: Vec<f64> = (0..nr)
        .flat_map(|p| (0..c).map(move |k| f_r.at(k, p)))
        .collect();
    let tv: Vec<f64> = (0..nt)
        .flat_map(|p| (0..c).map(move |k| f_t.at(k, p)))
        .collect();

    let mut data = vec![0.0; nr * nt];
    data.par_chunks_mut(nt).enumerate().for_each(|(i, row)| {
        if !m_r.at(i) {
            return;
        }
        let a = &rv[i * c..(i + 1) * c];
        for (j, out) in row.iter_mut().enumerate() {
            if m_t.at(j) {
                let b = &tv[j * c..(j + 1) * c];
                *out = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
    });
    CorrelationMap::from_vec(ref_shape, tgt_shape, data)
}

/// Softmax-normalized correlation. Each valid column is a distribution over
/// the visible reference rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCorrelation {
    pub weights: CorrelationMap,
    /// `false` for columns with no visible reference row (all-zero column).
    pub column_valid: Vec<bool>,
}

impl NormalizedCorrelation {
    /// Clears columns at target holes; their softmax carries no matching
    /// information.
    pub fn restrict_columns(&mut self, m_t: &Mask) {
        let rows = self.weights.rows();
        for (j, valid) in self.column_valid.iter_mut().enumerate() {
            if *valid && !m_t.at(j) {
                *valid = false;
                for i in 0..rows {
                    self.weights.set(i, j, 0.0);
                }
            }
        }
    }

    pub fn valid_columns(&self) -> usize {
        self.column_valid.iter().filter(|&&v| v).count()
    }
}

/// Per target column, softmax over reference rows with `m_r(i) = 1` of
/// `C(i, j) / temperature`. Hole rows get weight 0 and are excluded from the
/// partition function.
pub fn softmax_normalize(
    c: &CorrelationMap,
    m_r: &Mask,
    temperature: f64,
) -> Result<NormalizedCorrelation> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if m_r.len() != c.rows() {
        return Err(Error::ShapeMismatch(format!(
            "reference mask of {} for {} correlation rows",
            m_r.len(),
            c.rows()
        )));
    }
    let (rows, cols) = (c.rows(), c.cols());
    let valid_rows: Vec<usize> = (0..rows).filter(|&i| m_r.at(i)).collect();
    let columns: Vec<Option<Vec<f64>>> = (0..cols)
        .into_par_iter()
        .map(|j| {
            if valid_rows.is_empty() {
                return None;
            }
            let max = valid_rows
                .iter()
                .map(|&i| c.get(i, j) / temperature)
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = valid_rows
                .iter()
                .map(|&i| (c.get(i, j) / temperature - max).exp())
                .collect();
            let sum: f64 = exps.iter().sum();
            Some(exps.into_iter().map(|e| e / sum).collect())
        })
        .collect();

    let mut weights = CorrelationMap::zeros(c.ref_shape(), c.tgt_shape());
    let mut column_valid = vec![false; cols];
    for (j, col) in columns.into_iter().enumerate() {
        if let Some(col) = col {
            column_valid[j] = true;
            for (&i, w) in valid_rows.iter().zip(col) {
                weights.set(i, j, w);
            }
        }
    }
    Ok(NormalizedCorrelation {
        weights,
        column_valid,
    })
}
