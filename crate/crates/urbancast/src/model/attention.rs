//! Geospatial attention primitives.
//!
//! Cross-attention scores are computed as usual (scaled dot product and
//! softmax over the value slots) and then multiplied elementwise by a prior
//! weight vector combining spatial proximity and information entropy. The
//! weighted scores are not renormalized; a config flag offers a renormalized
//! variant for ablation.

use crate::error::{Error, Result};
use crate::model::linalg::{dot, Mat};

/// Numerically stable softmax; output sums to 1.
pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Spatial-proximity weights: W_S_j = 1 - d_j / max(d), so the nearest slot
/// gets weight 1 and the farthest 0. All weights are 1 when every distance
/// is (numerically) zero.
pub fn spatial_weights(distances: &[f64]) -> Result<Vec<f64>> {
    for &d in distances {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::NonFinite { context: format!("distance {d}") });
        }
    }
    let max = distances.iter().fold(0.0f64, |m, &v| m.max(v));
    if max < 1e-12 {
        return Ok(vec![1.0; distances.len()]);
    }
    Ok(distances.iter().map(|&d| (1.0 - d / max).clamp(0.0, 1.0)).collect())
}

/// Entropy weights: W_E_j = H_j / max(H). All weights are 1 when every
/// entropy is (numerically) zero.
pub fn entropy_weights(entropies: &[f64]) -> Result<Vec<f64>> {
    for &h in entropies {
        if !h.is_finite() || h < 0.0 {
            return Err(Error::NonFinite { context: format!("entropy {h}") });
        }
    }
    let max = entropies.iter().fold(0.0f64, |m, &v| m.max(v));
    if max < 1e-12 {
        return Ok(vec![1.0; entropies.len()]);
    }
    Ok(entropies.iter().map(|&h| (h / max).clamp(0.0, 1.0)).collect())
}

/// Convex combination alpha * W_S + (1 - alpha) * W_E.
pub fn combined_weights(spatial: &[f64], entropy: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if spatial.len() != entropy.len() {
        return Err(Error::DimensionMismatch { expected: spatial.len(), got: entropy.len() });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(spatial
        .iter()
        .zip(entropy)
        .map(|(&s, &e)| alpha * s + (1.0 - alpha) * e)
        .collect())
}

/// Single-query weighted cross-attention:
/// out = sum_j weights_j * softmax(keys . query / sqrt(d_k))_j * values_j.
///
/// The softmax sums to 1 before weighting; no renormalization afterwards.
pub fn geo_attention(query: &[f64], keys: &Mat, values: &Mat, weights: &[f64]) -> Result<Vec<f64>> {
    if keys.cols() != query.len() {
        return Err(Error::DimensionMismatch { expected: keys.cols(), got: query.len() });
    }
    if keys.rows() != values.rows() || keys.rows() != weights.len() {
        return Err(Error::DimensionMismatch { expected: keys.rows(), got: weights.len() });
    }
    if !query.iter().all(|v| v.is_finite())
        || !keys.is_finite()
        || !values.is_finite()
        || !weights.iter().all(|v| v.is_finite())
    {
        return Err(Error::NonFinite { context: "geo_attention input".into() });
    }
    let (attn, _) = attention_scores(query, keys);
    let mut out = vec![0.0; values.cols()];
    for j in 0..values.rows() {
        let c = weights[j] * attn[j];
        if c == 0.0 {
            continue;
        }
        for (dst, &v) in out.iter_mut().zip(values.row(j)) {
            *dst += c * v;
        }
    }
    Ok(out)
}

/// Pre-weighting attention distribution for `query` against `keys`.
/// Returns (softmax scores, 1/sqrt(d_k)).
pub(crate) fn attention_scores(query: &[f64], keys: &Mat) -> (Vec<f64>, f64) {
    let scale = 1.0 / (keys.cols() as f64).sqrt();
    let logits: Vec<f64> = (0..keys.rows()).map(|j| dot(keys.row(j), query) * scale).collect();
    (softmax(&logits), scale)
}
