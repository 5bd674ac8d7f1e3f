//! Masked non-local attention: coarse target positions inside the borrowed
//! region attend over every visible position of the unwarped references
//! and add the retrieved value as a residual.

use rayon::prelude::*;

use crate::correspondence::{CorrelationMap, NORM_EPS};
use crate::error::{Error, Result};
use crate::field::{FeatureMap, Mask};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
/// Largest query grid side accepted by [`attention_map_export`].
pub const EXPORT_MAX_SIDE: usize = 64;

/// Position-major query, key and value matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOperands {
    channels: usize,
    query_shape: (usize, usize),
    key_shape: (usize, usize),
    frames: usize,
    /// `queries x channels`, L2-normalized rows.
    q: Vec<f64>,
    /// `keys x channels`, L2-normalized rows.
    k: Vec<f64>,
    /// `keys x channels`, raw.
    v: Vec<f64>,
    pub query_mask: Mask,
    /// Key index `frame * h * w + p`.
    pub key_valid: Vec<bool>,
}

fn normalized_rows(f: &FeatureMap) -> Vec<f64> {
    let c = f.channels();
    let mut out = Vec::with_capacity(f.pixels() * c);
    for p in 0..f.pixels() {
        let norm = (0..c).map(|k| f.at(k, p).powi(2)).sum::<f64>().sqrt();
        let scale = 1.0 / norm.max(NORM_EPS);
        out.extend((0..c).map(|k| f.at(k, p) * scale));
    }
    out
}

fn raw_rows(f: &FeatureMap) -> impl Iterator<Item = f64> + '_ {
    (0..f.pixels()).flat_map(move |p| (0..f.channels()).map(move |k| f.at(k, p)))
}

impl AttentionOperands {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn queries(&self) -> usize {
        self.query_shape.0 * self.query_shape.1
    }

    pub fn keys(&self) -> usize {
        self.key_valid.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn query_shape(&self) -> (usize, usize) {
        self.query_shape
    }

    pub fn key_shape(&self) -> (usize, usize) {
        self.key_shape
    }

    pub fn valid_keys(&self) -> usize {
        self.key_valid.iter().filter(|&&v| v).count()
    }

    pub fn query(&self, j: usize) -> &[f64] {
        &self.q[j * self.channels..(j + 1) * self.channels]
    }

    pub fn key(&self, i: usize) -> &[f64] {
        &self.k[i * self.channels..(i + 1) * self.channels]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.v[i * self.channels..(i + 1) * self.channels]
    }

    /// `(frame, flat position)` of key `i`.
    pub fn key_location(&self, i: usize) -> (usize, usize) {
        let n = self.key_shape.0 * self.key_shape.1;
        (i / n, i % n)
    }

    /// Attention distribution of query `j`, or `None` when the position is
    /// not refined (outside the query mask or no valid key).
    pub fn weights(&self, j: usize, temperature: f64) -> Option<Vec<f64>> {
        if !self.query_mask.at(j) || !self.key_valid.iter().any(|&v| v) {
            return None;
        }
        let q = self.query(j);
        let mut scores = vec![f64::NEG_INFINITY; self.keys()];
        let mut best = f64::NEG_INFINITY;
        for (i, s) in scores.iter_mut().enumerate() {
            if self.key_valid[i] {
                *s = q.iter().zip(self.key(i)).map(|(a, b)| a * b).sum::<f64>() / temperature;
                best = best.max(*s);
            }
        }
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = if *s == f64::NEG_INFINITY {
                0.0
            } else {
                (*s - best).exp()
            };
            total += *s;
        }
        for s in scores.iter_mut() {
            *s /= total;
        }
        Some(scores)
    }
}

/// Flattens the coarse target into queries and the references into keys and
/// values. Keys at reference holes are invalid.
pub fn build_attention_operands(
    x_hat_t: &FeatureMap,
    m_hat: &Mask,
    refs: &[FeatureMap],
    ref_masks: &[Mask],
) -> Result<AttentionOperands> {
    if refs.is_empty() {
        return Err(Error::EmptyInput("attention references"));
    }
    if refs.len() != ref_masks.len() {
        return Err(Error::LengthMismatch {
            what: "attention references and masks",
            left: refs.len(),
            right: ref_masks.len(),
        });
    }
    if !x_hat_t.same_grid(m_hat) {
        return Err(Error::ShapeMismatch(
            "query map and mask differ in size".into(),
        ));
    }
    let key_shape = (refs[0].height(), refs[0].width());
    for (r, m) in refs.iter().zip(ref_masks) {
        if r.channels() != x_hat_t.channels()
            || (r.height(), r.width()) != key_shape
            || !r.same_grid(m)
        {
            return Err(Error::ShapeMismatch(
                "attention reference differs in shape".into(),
            ));
        }
    }
    let mut k = Vec::new();
    let mut v = Vec::new();
    let mut key_valid = Vec::new();
    for (r, m) in refs.iter().zip(ref_masks) {
        k.extend(normalized_rows(r));
        v.extend(raw_rows(r));
        key_valid.extend_from_slice(m.as_slice());
    }
    Ok(AttentionOperands {
        channels: x_hat_t.channels(),
        query_shape: (x_hat_t.height(), x_hat_t.width()),
        key_shape,
        frames: refs.len(),
        q: normalized_rows(x_hat_t),
        k,
        v,
        query_mask: m_hat.clone(),
        key_valid,
    })
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "attention temperature must be positive, got {t}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub output: FeatureMap,
    /// Highest-weight key per refined position (lowest index on ties).
    pub argmax: Vec<Option<usize>>,
}

/// Residual refinement with the per-position argmax key recorded.
pub fn nonlocal_refine_detailed(
    ops: &AttentionOperands,
    x_hat_t: &FeatureMap,
    temperature: f64,
) -> Result<Refinement> {
    check_temperature(temperature)?;
    if (x_hat_t.height(), x_hat_t.width()) != ops.query_shape || x_hat_t.channels() != ops.channels
    {
        return Err(Error::ShapeMismatch(
            "coarse map does not match attention queries".into(),
        ));
    }
    let c = ops.channels;
    let rows: Vec<Option<(Vec<f64>, usize)>> = (0..ops.queries())
        .into_par_iter()
        .map(|j| {
            let w = ops.weights(j, temperature)?;
            let mut residual = vec![0.0; c];
            let mut arg = 0;
            for (i, &wi) in w.iter().enumerate() {
                if wi > w[arg] {
                    arg = i;
                }
                if wi != 0.0 {
                    for (r, &val) in residual.iter_mut().zip(ops.value(i)) {
                        *r += wi * val;
                    }
                }
            }
            Some((residual, arg))
        })
        .collect();
    let mut output = x_hat_t.clone();
    let mut argmax = vec![None; ops.queries()];
    for (j, row) in rows.into_iter().enumerate() {
        if let Some((residual, arg)) = row {
            for (k, r) in residual.into_iter().enumerate() {
                *output.at_mut(k, j) += r;
            }
            argmax[j] = Some(arg);
        }
    }
    Ok(Refinement { output, argmax })
}

/// `x_hat_t + softmax(q^T k / T) v` on refined positions, `x_hat_t`
/// elsewhere.
pub fn nonlocal_refine(
    ops: &AttentionOperands,
    x_hat_t: &FeatureMap,
    temperature: f64,
) -> Result<FeatureMap> {
    Ok(nonlocal_refine_detailed(ops, x_hat_t, temperature)?.output)
}

/// Full attention matrix, queries as rows and keys as columns. Rows of
/// unrefined positions are zero.
pub fn attention_map_export(ops: &AttentionOperands, temperature: f64) -> Result<CorrelationMap> {
    check_temperature(temperature)?;
    let (h, w) = ops.query_shape;
    if h > EXPORT_MAX_SIDE || w > EXPORT_MAX_SIDE {
        return Err(Error::SizeGuard(format!(
            "attention export limited to {EXPORT_MAX_SIDE}x{EXPORT_MAX_SIDE} queries, got {w}x{h}"
        )));
    }
    let (kh, kw) = ops.key_shape;
    let nk = ops.keys();
    let mut data = vec![0.0; ops.queries() * nk];
    data.par_chunks_mut(nk).enumerate().for_each(|(j, row)| {
        if let Some(wts) = ops.weights(j, temperature) {
            row.copy_from_slice(&wts);
        }
    });
    // Keys span frames; expose them as a (frames * kh) x kw grid.
    CorrelationMap::from_vec((h, w), (ops.frames * kh, kw), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
        use rand::Rng;
        let mut rng = crate::rng::SeedTree::new(seed).stream(crate::rng::domain::TEST, 0);
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn empty_query_mask_is_identity() {
        let x = random_map(1, 4, 3, 3);
        let r = vec![random_map(2, 4, 3, 3)];
        let ops =
            build_attention_operands(&x, &Mask::filled(3, 3, false), &r, &[Mask::visible(3, 3)])
                .unwrap();
        assert_eq!(nonlocal_refine(&ops, &x, 0.07).unwrap(), x);
    }

    #[test]
    fn all_keys_masked() {
        let x = random_map(1, 4, 3, 3);
        let r = vec![random_map(2, 4, 3, 3); 2];
        let ops = build_attention_operands(
            &x,
            &Mask::visible(3, 3),
            &r,
            &[Mask::filled(3, 3, false), Mask::filled(3, 3, false)],
        )
        .unwrap();
        assert_eq!(ops.valid_keys(), 0);
        let refined = nonlocal_refine_detailed(&ops, &x, 0.07).unwrap();
        assert_eq!(refined.output, x);
        assert!(refined.argmax.iter().all(Option::is_none));
    }

    #[test]
    fn singleton_key_returns_its_value() {
        let x = random_map(3, 2, 4, 4);
        let r = random_map(4, 2, 4, 4);
        let mut km = Mask::filled(4, 4, false);
        km.set(1, 2, true);
        let qm = Mask::from_fn(4, 4, |y, _| y < 2);
        let ops = build_attention_operands(&x, &qm, &[r.clone()], &[km]).unwrap();
        let out = nonlocal_refine(&ops, &x, 0.07).unwrap();
        let v0 = r.vector(6);
        for j in 0..16 {
            for c in 0..2 {
                let expect = if qm.at(j) {
                    x.at(c, j) + v0[c]
                } else {
                    x.at(c, j)
                };
                assert_eq!(out.at(c, j), expect);
            }
        }
        let map = attention_map_export(&ops, 0.07).unwrap();
        for j in 0..16 {
            let row = map.row(j);
            let expect: Vec<f64> = (0..16)
                .map(|i| if qm.at(j) && i == 6 { 1.0 } else { 0.0 })
                .collect();
            assert_eq!(row, &expect[..]);
        }
    }

    #[test]
    fn unit_inputs_unchanged_by_normalization() {
        let x = FeatureMap::from_fn(2, 2, 2, |c, y, x| if c == (y + x) % 2 { 1.0 } else { 0.0 });
        let ops = build_attention_operands(
            &x,
            &Mask::visible(2, 2),
            &[x.clone()],
            &[Mask::visible(2, 2)],
        )
        .unwrap();
        for j in 0..4 {
            assert_eq!(ops.query(j), &x.vector(j)[..]);
            assert_eq!(ops.key(j), &x.vector(j)[..]);
        }
    }

    #[test]
    fn export_guard_and_bad_temperature() {
        let x = FeatureMap::zeros(1, 65, 2);
        let ops = build_attention_operands(
            &x,
            &Mask::visible(65, 2),
            &[x.clone()],
            &[Mask::visible(65, 2)],
        )
        .unwrap();
        assert!(matches!(
            attention_map_export(&ops, 0.07),
            Err(Error::SizeGuard(_))
        ));
        assert!(nonlocal_refine(&ops, &x, 0.0).is_err());
    }
}
