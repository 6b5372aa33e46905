//! Cross-attention prediction model.
//!
//! A single query token (the target region embedding) attends over a fixed
//! set of value tokens (the target plus its retrieved context regions).
//! Post-softmax scores are weighted by spatial proximity and information
//! entropy. Every layer reads the original region embeddings as values and
//! projects keys from a trainable per-layer key matrix, so the priors stay
//! spatially aligned at any depth; only the query state evolves. A final
//! linear head maps the query state to the scalar prediction.

mod attention;
mod backward;
mod checkpoint;
mod linalg;
mod mlp;
mod train;

pub use attention::{combined_weights, entropy_weights, geo_attention, spatial_weights};
pub use backward::gradients;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use linalg::{dot, mat_vec, vec_mat, Mat};
pub use mlp::{mlp_forward, mlp_gradients, mlp_init, MlpParams};
pub use train::{
    init_params, mse_loss, predict_batch, train, train_from, OptimizerKind, TrainConfig,
    TrainOutcome, TrainedModel,
};

use crate::error::{Error, Result};
use crate::retrieval::ContextSet;
use crate::store::region_entropy;
use attention::attention_scores;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// How the attention prior is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// alpha * W_S + (1 - alpha) * W_E
    Full,
    /// Spatial proximity only.
    SpatialOnly,
    /// Information entropy only.
    EntropyOnly,
    /// Prior weights replaced by ones (still multiplied in).
    None,
    /// Weighting step skipped entirely; plain cross-attention.
    Bypass,
}

impl WeightingMode {
    pub const ABLATION: [WeightingMode; 4] = [
        WeightingMode::Full,
        WeightingMode::SpatialOnly,
        WeightingMode::EntropyOnly,
        WeightingMode::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightingMode::Full => "full",
            WeightingMode::SpatialOnly => "spatial_only",
            WeightingMode::EntropyOnly => "entropy_only",
            WeightingMode::None => "none",
            WeightingMode::Bypass => "bypass",
        }
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(WeightingMode::Full),
            "spatial_only" => Ok(WeightingMode::SpatialOnly),
            "entropy_only" => Ok(WeightingMode::EntropyOnly),
            "none" => Ok(WeightingMode::None),
            "bypass" => Ok(WeightingMode::Bypass),
            other => Err(Error::Config(format!("unknown weighting mode '{other}'"))),
        }
    }
}

/// Per-layer update rule for the query state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// query += multi-head output. The default; keeps the mechanism minimal.
    Residual,
    /// Pre-norm transformer block with a ReLU feed-forward sublayer.
    PreNormFfn,
}

/// Model shape and attention configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
    pub layers: usize,
    pub alpha: f64,
    /// m = n + 1 value slots: the target plus its retrieved context.
    pub context_slots: usize,
    pub weighting: WeightingMode,
    /// Renormalize attention scores after prior weighting (ablation flag).
    #[serde(default)]
    pub renormalize: bool,
    #[serde(default = "default_block")]
    pub block: BlockVariant,
    #[serde(default)]
    pub d_ff: usize,
}

fn default_block() -> BlockVariant {
    BlockVariant::Residual
}

impl AttentionConfig {
    /// Head dimensions default to d_model / heads.
    pub fn new(d_model: usize, heads: usize, layers: usize, context_slots: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} must be divisible by heads {heads}"
            )));
        }
        Ok(AttentionConfig {
            d_model,
            d_k: d_model / heads,
            d_v: d_model / heads,
            heads,
            layers,
            alpha: 0.5,
            context_slots,
            weighting: WeightingMode::Full,
            renormalize: false,
            block: BlockVariant::Residual,
            d_ff: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_k == 0 || self.d_v == 0 || self.heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.context_slots == 0 {
            return Err(Error::Config("context_slots must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.block == BlockVariant::PreNormFfn && self.d_ff == 0 {
            return Err(Error::Config("d_ff must be set for the pre-norm FFN variant".into()));
        }
        Ok(())
    }
}

impl Default for AttentionConfig {
    /// Desk-scale default: D=64, 4 heads, 2 layers, 17 value slots.
    fn default() -> Self {
        AttentionConfig::new(64, 4, 2, 17).unwrap()
    }
}

/// Feed-forward sublayer parameters for the pre-norm block variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Mat, // d_model x d_ff
    pub b1: Vec<f64>,
    pub w2: Mat, // d_ff x d_model
    pub b2: Vec<f64>,
}

/// One attention layer: per-head projections, the trainable key matrix
/// shared across heads, and the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Vec<Mat>, // each d_model x d_k
    pub w_k: Vec<Mat>, // each d_model x d_k
    pub w_v: Vec<Mat>, // each d_model x d_v
    pub k_base: Mat,   // context_slots x d_model
    pub w_o: Mat,      // heads*d_v x d_model
    pub ffn: Option<FfnParams>,
}

/// Full parameter set: layers plus the linear prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

impl ModelParams {
    pub fn zeros(cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let layer = |_l: usize| LayerParams {
            w_q: (0..cfg.heads).map(|_| Mat::zeros(cfg.d_model, cfg.d_k)).collect(),
            w_k: (0..cfg.heads).map(|_| Mat::zeros(cfg.d_model, cfg.d_k)).collect(),
            w_v: (0..cfg.heads).map(|_| Mat::zeros(cfg.d_model, cfg.d_v)).collect(),
            k_base: Mat::zeros(cfg.context_slots, cfg.d_model),
            w_o: Mat::zeros(cfg.heads * cfg.d_v, cfg.d_model),
            ffn: match cfg.block {
                BlockVariant::Residual => None,
                BlockVariant::PreNormFfn => Some(FfnParams {
                    ln1_gain: vec![0.0; cfg.d_model],
                    ln1_bias: vec![0.0; cfg.d_model],
                    ln2_gain: vec![0.0; cfg.d_model],
                    ln2_bias: vec![0.0; cfg.d_model],
                    w1: Mat::zeros(cfg.d_model, cfg.d_ff),
                    b1: vec![0.0; cfg.d_ff],
                    w2: Mat::zeros(cfg.d_ff, cfg.d_model),
                    b2: vec![0.0; cfg.d_model],
                }),
            },
        };
        Ok(ModelParams {
            layers: (0..cfg.layers).map(layer).collect(),
            head_weights: vec![0.0; cfg.d_model],
            head_bias: 0.0,
        })
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_| n += 1);
        n
    }

    /// Parameters in declaration order: per layer the head projections
    /// (w_q, w_k, w_v), then k_base, w_o and any FFN block; finally the
    /// prediction head.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|v| out.push(v));
        out
    }

    fn visit(&self, mut f: impl FnMut(f64)) {
        for layer in &self.layers {
            for m in layer.w_q.iter().chain(&layer.w_k).chain(&layer.w_v) {
                m.data().iter().for_each(|&v| f(v));
            }
            layer.k_base.data().iter().for_each(|&v| f(v));
            layer.w_o.data().iter().for_each(|&v| f(v));
            if let Some(ffn) = &layer.ffn {
                for slice in [&ffn.ln1_gain, &ffn.ln1_bias, &ffn.ln2_gain, &ffn.ln2_bias] {
                    slice.iter().for_each(|&v| f(v));
                }
                ffn.w1.data().iter().for_each(|&v| f(v));
                ffn.b1.iter().for_each(|&v| f(v));
                ffn.w2.data().iter().for_each(|&v| f(v));
                ffn.b2.iter().for_each(|&v| f(v));
            }
        }
        self.head_weights.iter().for_each(|&v| f(v));
        f(self.head_bias);
    }

    /// Overwrites every parameter from `flat`, which must have been produced
    /// by [`flatten`](Self::flatten) on an identically shaped model.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        let mut take = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        for layer in &mut self.layers {
            for m in layer.w_q.iter_mut().chain(layer.w_k.iter_mut()).chain(layer.w_v.iter_mut()) {
                take(m.data_mut());
            }
            take(layer.k_base.data_mut());
            take(layer.w_o.data_mut());
            if let Some(ffn) = &mut layer.ffn {
                take(&mut ffn.ln1_gain);
                take(&mut ffn.ln1_bias);
                take(&mut ffn.ln2_gain);
                take(&mut ffn.ln2_bias);
                take(ffn.w1.data_mut());
                take(&mut ffn.b1);
                take(ffn.w2.data_mut());
                take(&mut ffn.b2);
            }
        }
        take(&mut self.head_weights);
        self.head_bias = it.next().unwrap();
        Ok(())
    }
}

/// Immutable per-target attention context: distances and entropies per value
/// slot plus the value embeddings. Slot 0 is the target region itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoContext {
    distances: Vec<f64>,
    entropies: Vec<f64>,
    values: Mat, // slots x d_model
}

impl GeoContext {
    /// Builds the context for `target_embedding` and its retrieved regions.
    pub fn new(target_embedding: &[f32], context: &ContextSet) -> Result<Self> {
        let target_entropy = region_entropy(target_embedding)?;
        let dim = target_embedding.len();
        let slots = context.entries.len() + 1;
        let mut distances = Vec::with_capacity(slots);
        let mut entropies = Vec::with_capacity(slots);
        let mut values = Mat::zeros(slots, dim);
        distances.push(0.0);
        entropies.push(target_entropy);
        for (dst, &src) in values.row_mut(0).iter_mut().zip(target_embedding) {
            *dst = src as f64;
        }
        for (slot, entry) in context.entries.iter().enumerate() {
            if entry.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: entry.embedding.len() });
            }
            distances.push(entry.distance);
            entropies.push(entry.entropy);
            for (dst, &src) in values.row_mut(slot + 1).iter_mut().zip(&entry.embedding) {
                *dst = src as f64;
            }
        }
        Self::from_parts(distances, entropies, values)
    }

    /// Assembles a context from raw slot data, validating the invariants:
    /// distances finite and nonnegative with slot 0 exactly zero, entropies
    /// within [0, ln D], finite values.
    pub fn from_parts(distances: Vec<f64>, entropies: Vec<f64>, values: Mat) -> Result<Self> {
        let slots = values.rows();
        if slots == 0 {
            return Err(Error::EmptyInput("context slots"));
        }
        if distances.len() != slots || entropies.len() != slots {
            return Err(Error::DimensionMismatch {
                expected: slots,
                got: distances.len().min(entropies.len()),
            });
        }
        if distances[0] != 0.0 {
            return Err(Error::Config(format!(
                "target slot distance must be 0, got {}",
                distances[0]
            )));
        }
        if distances.iter().any(|&d| !d.is_finite() || d < 0.0) {
            return Err(Error::NonFinite { context: "context distances".into() });
        }
        let ln_d = (values.cols() as f64).ln();
        if entropies.iter().any(|&h| !h.is_finite() || h < 0.0 || h > ln_d + 1e-9) {
            return Err(Error::NonFinite { context: "context entropies".into() });
        }
        if !values.is_finite() {
            return Err(Error::NonFinite { context: "context value embeddings".into() });
        }
        Ok(GeoContext { distances, entropies, values })
    }

    pub fn slots(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropies
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    /// The prior weight vector for this context under `cfg`, or None when
    /// weighting is bypassed.
    pub fn prior_weights(&self, cfg: &AttentionConfig) -> Result<Option<Vec<f64>>> {
        match cfg.weighting {
            WeightingMode::Bypass => Ok(None),
            WeightingMode::None => Ok(Some(vec![1.0; self.slots()])),
            WeightingMode::SpatialOnly => Ok(Some(spatial_weights(&self.distances)?)),
            WeightingMode::EntropyOnly => Ok(Some(entropy_weights(&self.entropies)?)),
            WeightingMode::Full => {
                let ws = spatial_weights(&self.distances)?;
                let we = entropy_weights(&self.entropies)?;
                Ok(Some(combined_weights(&ws, &we, cfg.alpha)?))
            }
        }
    }
}

/// One labelled training or evaluation record.
#[derive(Debug, Clone)]
pub struct Sample {
    pub geo: GeoContext,
    pub label: f64,
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

pub(crate) struct HeadCache {
    pub q: Vec<f64>,
    pub khat: Mat,
    pub vh: Mat,
    pub attn: Vec<f64>,
    pub coeff: Vec<f64>,
    pub coeff_sum: f64,
}

pub(crate) struct LnCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

pub(crate) struct LayerCache {
    pub ln1: Option<LnCache>,
    pub query_src: Vec<f64>,
    pub heads: Vec<HeadCache>,
    pub concat: Vec<f64>,
    pub ln2: Option<LnCache>,
    pub ffn_pre: Option<Vec<f64>>,
    pub ffn_hidden: Option<Vec<f64>>,
    pub output: Vec<f64>,
    /// Copy of the value matrix fed to this layer; every layer must read the
    /// original region embeddings.
    pub values_in: Mat,
}

pub(crate) struct ForwardCache {
    pub weights: Option<Vec<f64>>,
    pub layers: Vec<LayerCache>,
    pub final_state: Vec<f64>,
    pub prediction: f64,
}

const LN_EPS: f64 = 1e-8;

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&xh, (&g, &b))| g * xh + b)
        .collect();
    (out, LnCache { normalized, inv_std })
}

/// Multi-head attention for one query state against the context values.
/// Returns the projected output (before any residual update).
fn mha_forward(
    query_src: &[f64],
    geo: &GeoContext,
    layer: &LayerParams,
    cfg: &AttentionConfig,
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<HeadCache>, Vec<f64>)> {
    let mut concat = Vec::with_capacity(cfg.heads * cfg.d_v);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = vec_mat(query_src, &layer.w_q[h]);
        let khat = mat_mul(&layer.k_base, &layer.w_k[h]);
        let vh = mat_mul(&geo.values, &layer.w_v[h]);
        let (attn, _) = attention_scores(&q, &khat);
        let mut coeff: Vec<f64> = match weights {
            Some(w) => attn.iter().zip(w).map(|(&a, &wv)| a * wv).collect(),
            None => attn.clone(),
        };
        let coeff_sum: f64 = coeff.iter().sum();
        if cfg.renormalize {
            if coeff_sum <= 0.0 {
                return Err(Error::NonFinite {
                    context: "renormalized attention has zero total weight".into(),
                });
            }
            for c in &mut coeff {
                *c /= coeff_sum;
            }
        }
        let mut head_out = vec![0.0; cfg.d_v];
        for j in 0..vh.rows() {
            let c = coeff[j];
            if c == 0.0 {
                continue;
            }
            for (dst, &v) in head_out.iter_mut().zip(vh.row(j)) {
                *dst += c * v;
            }
        }
        concat.extend_from_slice(&head_out);
        heads.push(HeadCache { q, khat, vh, attn, coeff, coeff_sum });
    }
    let out = vec_mat(&concat, &layer.w_o);
    Ok((out, heads, concat))
}

pub(crate) fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols(), b.rows());
    let mut out = Mat::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        let row = a.row(r);
        let dst = out.row_mut(r);
        for (k, &av) in row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    out
}

/// One multi-head geospatial attention layer applied to `query_state`.
/// Values and the key base come from the layer inputs regardless of depth.
pub fn multi_head_layer(
    query_state: &[f64],
    geo: &GeoContext,
    layer: &LayerParams,
    cfg: &AttentionConfig,
) -> Result<Vec<f64>> {
    check_layer_shapes(query_state, geo, layer, cfg)?;
    let weights = geo.prior_weights(cfg)?;
    let (out, _, _) = mha_forward(query_state, geo, layer, cfg, weights.as_deref())?;
    Ok(out)
}

fn check_layer_shapes(
    query_state: &[f64],
    geo: &GeoContext,
    layer: &LayerParams,
    cfg: &AttentionConfig,
) -> Result<()> {
    if query_state.len() != cfg.d_model {
        return Err(Error::DimensionMismatch { expected: cfg.d_model, got: query_state.len() });
    }
    if geo.dim() != cfg.d_model {
        return Err(Error::DimensionMismatch { expected: cfg.d_model, got: geo.dim() });
    }
    if geo.slots() != cfg.context_slots {
        return Err(Error::DimensionMismatch { expected: cfg.context_slots, got: geo.slots() });
    }
    if layer.k_base.rows() != cfg.context_slots
        || layer.k_base.cols() != cfg.d_model
        || layer.w_q.len() != cfg.heads
        || layer.w_o.rows() != cfg.heads * cfg.d_v
        || layer.w_o.cols() != cfg.d_model
    {
        return Err(Error::Config("layer parameter shapes do not match config".into()));
    }
    Ok(())
}

/// Full forward pass: run the query state through every layer and apply the
/// linear prediction head.
pub fn forward(params: &ModelParams, geo: &GeoContext, cfg: &AttentionConfig) -> Result<f64> {
    Ok(forward_cached(params, geo, cfg)?.prediction)
}

pub(crate) fn forward_cached(
    params: &ModelParams,
    geo: &GeoContext,
    cfg: &AttentionConfig,
) -> Result<ForwardCache> {
    cfg.validate()?;
    if params.layers.len() != cfg.layers {
        return Err(Error::Config(format!(
            "model has {} layers, config says {}",
            params.layers.len(),
            cfg.layers
        )));
    }
    if geo.slots() != cfg.context_slots {
        return Err(Error::DimensionMismatch { expected: cfg.context_slots, got: geo.slots() });
    }
    let weights = geo.prior_weights(cfg)?;
    let mut state: Vec<f64> = geo.values.row(0).to_vec();
    let mut layers = Vec::with_capacity(cfg.layers);
    for (index, layer) in params.layers.iter().enumerate() {
        check_layer_shapes(&state, geo, layer, cfg)?;
        let input = state.clone();
        let cache = match cfg.block {
            BlockVariant::Residual => {
                let (mha_out, heads, concat) =
                    mha_forward(&input, geo, layer, cfg, weights.as_deref())?;
                let output: Vec<f64> = input.iter().zip(&mha_out).map(|(a, b)| a + b).collect();
                LayerCache {
                    ln1: None,
                    query_src: input,
                    heads,
                    concat,
                    ln2: None,
                    ffn_pre: None,
                    ffn_hidden: None,
                    output,
                    values_in: geo.values.clone(),
                }
            }
            BlockVariant::PreNormFfn => {
                let ffn = layer
                    .ffn
                    .as_ref()
                    .ok_or_else(|| Error::Config("pre-norm variant requires FFN parameters".into()))?;
                let (query_src, ln1) = layer_norm(&input, &ffn.ln1_gain, &ffn.ln1_bias);
                let (mha_out, heads, concat) =
                    mha_forward(&query_src, geo, layer, cfg, weights.as_deref())?;
                let x_mid: Vec<f64> = input.iter().zip(&mha_out).map(|(a, b)| a + b).collect();
                let (xb, ln2) = layer_norm(&x_mid, &ffn.ln2_gain, &ffn.ln2_bias);
                let mut pre = vec_mat(&xb, &ffn.w1);
                for (p, &b) in pre.iter_mut().zip(&ffn.b1) {
                    *p += b;
                }
                let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
                let mut ffn_out = vec_mat(&hidden, &ffn.w2);
                for (o, &b) in ffn_out.iter_mut().zip(&ffn.b2) {
                    *o += b;
                }
                let output: Vec<f64> = x_mid.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();
                LayerCache {
                    ln1: Some(ln1),
                    query_src,
                    heads,
                    concat,
                    ln2: Some(ln2),
                    ffn_pre: Some(pre),
                    ffn_hidden: Some(hidden),
                    output,
                    values_in: geo.values.clone(),
                }
            }
        };
        if cache.output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("layer {index} output") });
        }
        state = cache.output.clone();
        layers.push(cache);
    }
    let prediction = dot(&params.head_weights, &state) + params.head_bias;
    if !prediction.is_finite() {
        return Err(Error::NonFinite { context: "prediction head".into() });
    }
    Ok(ForwardCache { weights, layers, final_state: state, prediction })
}
