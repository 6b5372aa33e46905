//! Reverse-mode gradients for the attention model.
//!
//! Hand-derived backprop through the head projections, the softmax, the
//! prior weighting (including the optional renormalized variant), the
//! trainable key matrices, and the pre-norm FFN block. Verified against
//! central finite differences in the test suite.

use crate::error::{Error, Result};
use crate::model::linalg::{dot, mat_vec, vec_mat, Mat};
use crate::model::{
    forward_cached, AttentionConfig, BlockVariant, LayerCache, LayerParams, LnCache, ModelParams,
    Sample,
};

/// Batch-MSE loss and its exact gradients with respect to every parameter.
pub fn gradients(
    params: &ModelParams,
    batch: &[Sample],
    cfg: &AttentionConfig,
) -> Result<(f64, ModelParams)> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    gradients_over(params, batch, &indices, cfg)
}

/// Same as [`gradients`] but over `indices` into `samples`, so training can
/// shuffle without copying contexts.
pub(crate) fn gradients_over(
    params: &ModelParams,
    samples: &[Sample],
    indices: &[usize],
    cfg: &AttentionConfig,
) -> Result<(f64, ModelParams)> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let mut grads = ModelParams::zeros(cfg)?;
    let mut loss = 0.0;
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        let sample = &samples[i];
        let cache = forward_cached(params, &sample.geo, cfg)?;
        let residual = cache.prediction - sample.label;
        loss += residual * residual * scale;
        let d_pred = 2.0 * residual * scale;
        backward_record(params, cfg, &cache, d_pred, &mut grads);
    }
    Ok((loss, grads))
}

fn backward_record(
    params: &ModelParams,
    cfg: &AttentionConfig,
    cache: &crate::model::ForwardCache,
    d_pred: f64,
    grads: &mut ModelParams,
) {
    // Prediction head.
    for (g, &s) in grads.head_weights.iter_mut().zip(&cache.final_state) {
        *g += d_pred * s;
    }
    grads.head_bias += d_pred;
    let mut d_state: Vec<f64> = params.head_weights.iter().map(|&w| d_pred * w).collect();

    let weights = cache.weights.as_deref();
    for (layer_params, (layer_cache, layer_grads)) in params
        .layers
        .iter()
        .zip(cache.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        d_state = match cfg.block {
            BlockVariant::Residual => {
                let mut d_input = d_state.clone();
                let d_query_src = backward_mha(
                    layer_params,
                    layer_cache,
                    cfg,
                    weights,
                    &d_state,
                    layer_grads,
                );
                for (di, dq) in d_input.iter_mut().zip(&d_query_src) {
                    *di += dq;
                }
                d_input
            }
            BlockVariant::PreNormFfn => backward_prenorm_layer(
                layer_params,
                layer_cache,
                cfg,
                weights,
                &d_state,
                layer_grads,
            ),
        };
    }
}

/// Backward through one pre-norm block: residual FFN sublayer, LN2, the
/// attention sublayer, LN1. Returns dL/d(layer input).
fn backward_prenorm_layer(
    layer_params: &LayerParams,
    layer_cache: &LayerCache,
    cfg: &AttentionConfig,
    weights: Option<&[f64]>,
    d_out: &[f64],
    layer_grads: &mut LayerParams,
) -> Vec<f64> {
    let ffn = layer_params.ffn.as_ref().expect("pre-norm layer without FFN params");
    let ffn_grads = layer_grads.ffn.as_mut().expect("gradient holder missing FFN slot");
    let ln2 = layer_cache.ln2.as_ref().expect("missing LN2 cache");
    let pre = layer_cache.ffn_pre.as_ref().expect("missing FFN preactivation cache");
    let hidden = layer_cache.ffn_hidden.as_ref().expect("missing FFN hidden cache");

    // output = x_mid + hidden.W2 + b2
    let d_ffn_out = d_out;
    for (g, &d) in ffn_grads.b2.iter_mut().zip(d_ffn_out) {
        *g += d;
    }
    ffn_grads.w2.add_outer(hidden, d_ffn_out);
    let d_hidden = mat_vec(&ffn.w2, d_ffn_out);
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(pre)
        .map(|(&dh, &p)| if p > 0.0 { dh } else { 0.0 })
        .collect();
    for (g, &d) in ffn_grads.b1.iter_mut().zip(&d_pre) {
        *g += d;
    }
    // xb (the LN2 output) is reconstructed from its cached normalization.
    let xb: Vec<f64> = ln2
        .normalized
        .iter()
        .zip(ffn.ln2_gain.iter().zip(&ffn.ln2_bias))
        .map(|(&xh, (&g, &b))| g * xh + b)
        .collect();
    ffn_grads.w1.add_outer(&xb, &d_pre);
    let d_xb = mat_vec(&ffn.w1, &d_pre);

    let d_x_mid_ln = backward_layer_norm(
        &d_xb,
        ln2,
        &ffn.ln2_gain,
        &mut ffn_grads.ln2_gain,
        &mut ffn_grads.ln2_bias,
    );
    let mut d_x_mid = d_out.to_vec();
    for (d, ln) in d_x_mid.iter_mut().zip(&d_x_mid_ln) {
        *d += ln;
    }

    // x_mid = input + mha(LN1(input))
    let d_query_src = backward_mha(layer_params, layer_cache, cfg, weights, &d_x_mid, layer_grads);
    let ffn_grads = layer_grads.ffn.as_mut().expect("gradient holder missing FFN slot");
    let ln1 = layer_cache.ln1.as_ref().expect("missing LN1 cache");
    let d_input_ln = backward_layer_norm(
        &d_query_src,
        ln1,
        &ffn.ln1_gain,
        &mut ffn_grads.ln1_gain,
        &mut ffn_grads.ln1_bias,
    );
    let mut d_input = d_x_mid;
    for (d, ln) in d_input.iter_mut().zip(&d_input_ln) {
        *d += ln;
    }
    d_input
}

/// Backward through the multi-head attention sublayer given dL/d(mha output
/// + residual). Accumulates parameter gradients; returns dL/d(query source).
fn backward_mha(
    layer_params: &LayerParams,
    layer_cache: &LayerCache,
    cfg: &AttentionConfig,
    weights: Option<&[f64]>,
    d_residual_out: &[f64],
    layer_grads: &mut LayerParams,
) -> Vec<f64> {
    // mha_out = concat . W_O; the residual passes d through unchanged.
    let d_mha = d_residual_out;
    layer_grads.w_o.add_outer(&layer_cache.concat, d_mha);
    let d_concat = mat_vec(&layer_params.w_o, d_mha);

    let mut d_query_src = vec![0.0; layer_cache.query_src.len()];
    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    for h in 0..cfg.heads {
        let head = &layer_cache.heads[h];
        let gu = &d_concat[h * cfg.d_v..(h + 1) * cfg.d_v];
        let slots = head.vh.rows();

        // head_out = sum_j coeff_j . vh_j
        let mut d_coeff = vec![0.0; slots];
        for j in 0..slots {
            d_coeff[j] = dot(gu, head.vh.row(j));
            let c = head.coeff[j];
            if c != 0.0 {
                let scaled: Vec<f64> = gu.iter().map(|&g| g * c).collect();
                layer_grads.w_v[h].add_outer(layer_cache.values_in.row(j), &scaled);
            }
        }

        // coeff = s / sum(s) in renormalized mode, otherwise coeff = s,
        // where s_j = prior_j * attn_j (prior 1 under bypass).
        let d_s: Vec<f64> = if cfg.renormalize {
            let inner = dot(&d_coeff, &head.coeff);
            d_coeff.iter().map(|&dc| (dc - inner) / head.coeff_sum).collect()
        } else {
            d_coeff
        };
        let d_attn: Vec<f64> = match weights {
            Some(w) => d_s.iter().zip(w).map(|(&d, &wv)| d * wv).collect(),
            None => d_s,
        };

        // Softmax jacobian.
        let inner = dot(&head.attn, &d_attn);
        let d_logits: Vec<f64> = head.attn.iter().zip(&d_attn).map(|(&a, &da)| a * (da - inner)).collect();

        // logits_j = khat_j . q * scale
        let mut d_q = vec_mat(&d_logits, &head.khat);
        for v in &mut d_q {
            *v *= scale;
        }
        layer_grads.w_q[h].add_outer(&layer_cache.query_src, &d_q);
        let dq_src = mat_vec(&layer_params.w_q[h], &d_q);
        for (acc, d) in d_query_src.iter_mut().zip(&dq_src) {
            *acc += d;
        }

        // khat = k_base . W_K
        for j in 0..slots {
            let d_khat_j: Vec<f64> = head.q.iter().map(|&qv| qv * d_logits[j] * scale).collect();
            layer_grads.w_k[h].add_outer(layer_params.k_base.row(j), &d_khat_j);
            let d_kb = mat_vec(&layer_params.w_k[h], &d_khat_j);
            for (acc, d) in layer_grads.k_base.row_mut(j).iter_mut().zip(&d_kb) {
                *acc += d;
            }
        }
    }
    d_query_src
}

fn backward_layer_norm(
    d_out: &[f64],
    cache: &LnCache,
    gain: &[f64],
    gain_grad: &mut [f64],
    bias_grad: &mut [f64],
) -> Vec<f64> {
    let n = d_out.len() as f64;
    let mut d_norm = vec![0.0; d_out.len()];
    for i in 0..d_out.len() {
        bias_grad[i] += d_out[i];
        gain_grad[i] += d_out[i] * cache.normalized[i];
        d_norm[i] = d_out[i] * gain[i];
    }
    let mean_dn = d_norm.iter().sum::<f64>() / n;
    let mean_dn_xh = d_norm.iter().zip(&cache.normalized).map(|(d, x)| d * x).sum::<f64>() / n;
    d_norm
        .iter()
        .zip(&cache.normalized)
        .map(|(&dn, &xh)| cache.inv_std * (dn - mean_dn - xh * mean_dn_xh))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, GeoContext, WeightingMode};

    fn random_geo(seed: u64, slots: usize, dim: usize) -> GeoContext {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut distances: Vec<f64> = (0..slots).map(|_| rng.gen_range(0.0..2000.0)).collect();
        distances[0] = 0.0;
        let ln_d = (dim as f64).ln();
        let entropies: Vec<f64> = (0..slots).map(|_| rng.gen_range(0.0..ln_d)).collect();
        let values = Mat::from_fn(slots, dim, |_, _| rng.gen_range(-1.0..1.0));
        GeoContext::from_parts(distances, entropies, values).unwrap()
    }

    fn random_batch(seed: u64, count: usize, slots: usize, dim: usize) -> Vec<Sample> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        (0..count)
            .map(|i| Sample {
                geo: random_geo(seed.wrapping_add(i as u64), slots, dim),
                label: rng.gen_range(-1.0..1.0),
            })
            .collect()
    }

    fn batch_loss(params: &ModelParams, batch: &[Sample], cfg: &AttentionConfig) -> f64 {
        batch
            .iter()
            .map(|s| {
                let r = crate::model::forward(params, &s.geo, cfg).unwrap() - s.label;
                r * r
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Central finite differences over the flattened parameter vector.
    fn fd_gradients(params: &ModelParams, batch: &[Sample], cfg: &AttentionConfig) -> Vec<f64> {
        let base = params.flatten();
        let mut out = vec![0.0; base.len()];
        let mut probe = params.clone();
        let step = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            probe.assign_from_flat(&plus).unwrap();
            let loss_plus = batch_loss(&probe, batch, cfg);
            let mut minus = base.clone();
            minus[i] -= step;
            probe.assign_from_flat(&minus).unwrap();
            let loss_minus = batch_loss(&probe, batch, cfg);
            out[i] = (loss_plus - loss_minus) / (2.0 * step);
        }
        out
    }

    fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    fn check_gradients(cfg: &AttentionConfig, seed: u64) {
        let params = init_params(cfg, seed).unwrap();
        let batch = random_batch(seed, 3, cfg.context_slots, cfg.d_model);
        let (_, grads) = gradients(&params, &batch, cfg).unwrap();
        let numeric = fd_gradients(&params, &batch, cfg);
        let err = max_rel_error(&grads.flatten(), &numeric);
        assert!(err <= 1e-5, "seed {seed}: max relative error {err:e}");
    }

    #[test]
    fn gradcheck_default_weighting() {
        let cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        check_gradients(&cfg, 1);
    }

    #[test]
    fn gradcheck_renormalized_mode() {
        let mut cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        cfg.renormalize = true;
        check_gradients(&cfg, 2);
    }

    #[test]
    fn gradcheck_bypass_mode() {
        let mut cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        cfg.weighting = WeightingMode::Bypass;
        check_gradients(&cfg, 3);
    }

    #[test]
    fn gradcheck_prenorm_ffn_variant() {
        let mut cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        cfg.block = BlockVariant::PreNormFfn;
        cfg.d_ff = 12;
        check_gradients(&cfg, 4);
    }

    #[test]
    fn stationary_head_gives_zero_bias_gradient() {
        // Zero head weights and bias with zero labels: loss = bias^2 = 0 and
        // d(loss)/d(bias) = 2*bias = 0.
        let cfg = AttentionConfig::new(4, 1, 1, 3).unwrap();
        let mut params = init_params(&cfg, 7).unwrap();
        params.head_weights = vec![0.0; 4];
        params.head_bias = 0.0;
        let mut batch = random_batch(7, 2, 3, 4);
        for s in &mut batch {
            s.label = 0.0;
        }
        let (loss, grads) = gradients(&params, &batch, &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.head_bias, 0.0);
    }

    #[test]
    fn doubling_residuals_doubles_every_gradient() {
        let cfg = AttentionConfig::new(8, 2, 2, 5).unwrap();
        let params = init_params(&cfg, 11).unwrap();
        let batch = random_batch(11, 3, 5, 8);
        let (_, g1) = gradients(&params, &batch, &cfg).unwrap();
        // Move each label so the residual prediction-label exactly doubles.
        let doubled: Vec<Sample> = batch
            .iter()
            .map(|s| {
                let pred = crate::model::forward(&params, &s.geo, &cfg).unwrap();
                Sample { geo: s.geo.clone(), label: 2.0 * s.label - pred }
            })
            .collect();
        let (_, g2) = gradients(&params, &doubled, &cfg).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let cfg = AttentionConfig::new(4, 1, 1, 3).unwrap();
        let params = init_params(&cfg, 1).unwrap();
        assert!(matches!(gradients(&params, &[], &cfg), Err(Error::EmptyInput(_))));
    }
}
