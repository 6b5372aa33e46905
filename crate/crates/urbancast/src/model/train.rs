//! MSE training loop with seeded initialization and Adam / SGD optimizers.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::model::backward::gradients_over;
use crate::model::linalg::Mat;
use crate::model::{forward, AttentionConfig, ModelParams, Sample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub standardize_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            standardize_labels: true,
        }
    }
}

/// Trained parameters plus the label standardization applied during
/// training, so predictions can be mapped back to label units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub cfg: AttentionConfig,
    pub label_mean: f64,
    pub label_std: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Full-training-set MSE (in the standardized label space when
    /// standardization is on) after each epoch.
    pub history: Vec<f64>,
}

/// Mean squared error between predictions and labels.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("mse inputs"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
    }
    let sum: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Seeded parameter initialization: matrices uniform in +-1/sqrt(fan_in),
/// biases zero, layer-norm gains one.
pub fn init_params(cfg: &AttentionConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |m: &mut Mat, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in m.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let mut params = ModelParams::zeros(cfg)?;
    for layer in &mut params.layers {
        for m in &mut layer.w_q {
            fill(m, cfg.d_model);
        }
        for m in &mut layer.w_k {
            fill(m, cfg.d_model);
        }
        for m in &mut layer.w_v {
            fill(m, cfg.d_model);
        }
        fill(&mut layer.k_base, cfg.d_model);
        fill(&mut layer.w_o, cfg.heads * cfg.d_v);
        if let Some(ffn) = &mut layer.ffn {
            ffn.ln1_gain.iter_mut().for_each(|v| *v = 1.0);
            ffn.ln2_gain.iter_mut().for_each(|v| *v = 1.0);
            fill(&mut ffn.w1, cfg.d_model);
            fill(&mut ffn.w2, cfg.d_ff);
        }
    }
    let bound = 1.0 / (cfg.d_model as f64).sqrt();
    for v in &mut params.head_weights {
        *v = rng.gen_range(-bound..bound);
    }
    Ok(params)
}

/// Initializes from the training seed and optimizes. See [`train_from`].
pub fn train(dataset: &[Sample], cfg: &AttentionConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_params(cfg, tc.seed)?;
    train_from(params, dataset, cfg, tc)
}

/// Optimizes `params` on `dataset`: shuffled mini-batches, MSE loss,
/// deterministic given the seed. Aborts if the loss stops being finite.
pub fn train_from(
    params: ModelParams,
    dataset: &[Sample],
    cfg: &AttentionConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if tc.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if !(tc.learning_rate >= 0.0) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {}", tc.learning_rate)));
    }

    let (label_mean, label_std) = if tc.standardize_labels {
        let mean = dataset.iter().map(|s| s.label).sum::<f64>() / dataset.len() as f64;
        let var =
            dataset.iter().map(|s| (s.label - mean).powi(2)).sum::<f64>() / dataset.len() as f64;
        let std = var.sqrt();
        (mean, if std > 1e-12 { std } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let samples: Vec<Sample> = dataset
        .iter()
        .map(|s| Sample { geo: s.geo.clone(), label: (s.label - label_mean) / label_std })
        .collect();

    const SHUFFLE_SALT: u64 = 0x5348_5546;
    let mut params = params;
    let mut flat = params.flatten();
    let mut optimizer = Optimizer::new(tc.optimizer, flat.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, SHUFFLE_SALT));
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch_size) {
            let (_, grads) = gradients_over(&params, &samples, chunk, cfg)?;
            optimizer.step(&mut flat, &grads.flatten(), tc.learning_rate);
            params.assign_from_flat(&flat)?;
        }
        let loss = full_loss(&params, &samples, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        model: TrainedModel { params, cfg: cfg.clone(), label_mean, label_std },
        history,
    })
}

fn full_loss(params: &ModelParams, samples: &[Sample], cfg: &AttentionConfig) -> Result<f64> {
    let mut sum = 0.0;
    for sample in samples {
        let r = forward(params, &sample.geo, cfg)? - sample.label;
        sum += r * r;
    }
    Ok(sum / samples.len() as f64)
}

/// Applies the trained model to every sample, mapping predictions back to
/// raw label units when training standardized them.
pub fn predict_batch(model: &TrainedModel, dataset: &[Sample]) -> Result<Vec<f64>> {
    dataset
        .iter()
        .map(|s| {
            let y = forward(&model.params, &s.geo, &model.cfg)?;
            Ok(y * model.label_std + model.label_mean)
        })
        .collect()
}

struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        Optimizer { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeoContext;

    fn planted_linear_dataset(seed: u64, count: usize, slots: usize, dim: usize) -> Vec<Sample> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let probe: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..count)
            .map(|_| {
                let mut distances: Vec<f64> = (0..slots).map(|_| rng.gen_range(0.0..1000.0)).collect();
                distances[0] = 0.0;
                let entropies = vec![(dim as f64).ln() * 0.7; slots];
                let values = Mat::from_fn(slots, dim, |_, _| rng.gen_range(-1.0..1.0));
                let label: f64 =
                    values.row(0).iter().zip(&probe).map(|(v, p)| v * p).sum::<f64>();
                Sample {
                    geo: GeoContext::from_parts(distances, entropies, values).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn mse_loss_closed_forms() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let l = mse_loss(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((l - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(mse_loss(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = AttentionConfig::new(8, 2, 1, 4).unwrap();
        let dataset = planted_linear_dataset(3, 10, 4, 8);
        let tc = TrainConfig { learning_rate: 0.0, epochs: 1, ..TrainConfig::default() };
        let outcome = train(&dataset, &cfg, &tc).unwrap();
        assert_eq!(outcome.model.params, init_params(&cfg, tc.seed).unwrap());
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let cfg = AttentionConfig::new(8, 2, 1, 4).unwrap();
        let dataset = planted_linear_dataset(5, 12, 4, 8);
        let tc = TrainConfig { epochs: 5, seed: 42, ..TrainConfig::default() };
        let a = train(&dataset, &cfg, &tc).unwrap();
        let b = train(&dataset, &cfg, &tc).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn full_batch_sgd_decreases_loss_monotonically_on_planted_linear_data() {
        let cfg = AttentionConfig::new(8, 2, 1, 4).unwrap();
        let dataset = planted_linear_dataset(9, 16, 4, 8);
        let tc = TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 16,
            seed: 1,
            optimizer: OptimizerKind::Sgd,
            standardize_labels: true,
        };
        let outcome = train(&dataset, &cfg, &tc).unwrap();
        for pair in outcome.history.windows(2) {
            assert!(pair[1] < pair[0], "history not decreasing: {:?}", outcome.history);
        }
    }

    #[test]
    fn predict_batch_is_per_record_and_order_invariant() {
        let cfg = AttentionConfig::new(8, 2, 1, 4).unwrap();
        let dataset = planted_linear_dataset(13, 6, 4, 8);
        let tc = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let outcome = train(&dataset, &cfg, &tc).unwrap();

        assert!(predict_batch(&outcome.model, &[]).unwrap().is_empty());

        let single = predict_batch(&outcome.model, &dataset[..1]).unwrap();
        let direct = forward(&outcome.model.params, &dataset[0].geo, &cfg).unwrap()
            * outcome.model.label_std
            + outcome.model.label_mean;
        assert_eq!(single[0], direct);

        let all = predict_batch(&outcome.model, &dataset).unwrap();
        let reversed: Vec<Sample> = dataset.iter().rev().cloned().collect();
        let rev = predict_batch(&outcome.model, &reversed).unwrap();
        for (i, p) in rev.iter().enumerate() {
            assert_eq!(*p, all[dataset.len() - 1 - i]);
        }
    }
}
