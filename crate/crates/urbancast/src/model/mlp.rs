//! Fully connected baseline: one or two ReLU hidden layers and a linear
//! scalar output, fed the target embedding alone (no retrieved context).

use crate::error::{Error, Result};
use crate::model::linalg::{dot, mat_vec, vec_mat, Mat};
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// (weights d_in x d_out, bias) per hidden layer.
    pub hidden: Vec<(Mat, Vec<f64>)>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

/// Seeded initialization; `hidden_dims` must hold one or two layer widths.
pub fn mlp_init(d_in: usize, hidden_dims: &[usize], seed: u64) -> Result<MlpParams> {
    if hidden_dims.is_empty() || hidden_dims.len() > 2 {
        return Err(Error::Config(format!(
            "MLP supports 1 or 2 hidden layers, got {}",
            hidden_dims.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = Vec::new();
    let mut prev = d_in;
    for &width in hidden_dims {
        let bound = 1.0 / (prev as f64).sqrt();
        let mut w = Mat::zeros(prev, width);
        for v in w.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        hidden.push((w, vec![0.0; width]));
        prev = width;
    }
    let bound = 1.0 / (prev as f64).sqrt();
    let out_w = (0..prev).map(|_| rng.gen_range(-bound..bound)).collect();
    Ok(MlpParams { hidden, out_w, out_b: 0.0 })
}

/// hidden_k = relu(hidden_{k-1} . W_k + b_k); output = out_w . hidden + b.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<f64> {
    let mut state = input.to_vec();
    for (w, b) in &params.hidden {
        if state.len() != w.rows() {
            return Err(Error::DimensionMismatch { expected: w.rows(), got: state.len() });
        }
        let mut next = vec_mat(&state, w);
        for (v, &bias) in next.iter_mut().zip(b) {
            *v = (*v + bias).max(0.0);
        }
        state = next;
    }
    if state.len() != params.out_w.len() {
        return Err(Error::DimensionMismatch { expected: params.out_w.len(), got: state.len() });
    }
    Ok(dot(&params.out_w, &state) + params.out_b)
}

/// Batch-MSE loss and exact gradients, shaped like the parameters.
pub fn mlp_gradients(params: &MlpParams, batch: &[(Vec<f64>, f64)]) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("mlp gradient batch"));
    }
    let mut grads = MlpParams {
        hidden: params.hidden.iter().map(|(w, b)| (Mat::zeros(w.rows(), w.cols()), vec![0.0; b.len()])).collect(),
        out_w: vec![0.0; params.out_w.len()],
        out_b: 0.0,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (input, label) in batch {
        // Forward, keeping the per-layer activations.
        let mut activations = vec![input.clone()];
        for (w, b) in &params.hidden {
            let mut next = vec_mat(activations.last().unwrap(), w);
            for (v, &bias) in next.iter_mut().zip(b) {
                *v = (*v + bias).max(0.0);
            }
            activations.push(next);
        }
        let prediction = dot(&params.out_w, activations.last().unwrap()) + params.out_b;
        let residual = prediction - label;
        loss += residual * residual * scale;
        let d_pred = 2.0 * residual * scale;

        for (g, a) in grads.out_w.iter_mut().zip(activations.last().unwrap()) {
            *g += d_pred * a;
        }
        grads.out_b += d_pred;
        let mut d_act: Vec<f64> = params.out_w.iter().map(|&w| d_pred * w).collect();
        for k in (0..params.hidden.len()).rev() {
            let (w, _) = &params.hidden[k];
            // ReLU gate: activations[k+1] is already post-ReLU.
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&activations[k + 1])
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
            let (gw, gb) = &mut grads.hidden[k];
            for (g, &d) in gb.iter_mut().zip(&d_pre) {
                *g += d;
            }
            gw.add_outer(&activations[k], &d_pre);
            d_act = mat_vec(w, &d_pre);
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_the_bias() {
        let params = MlpParams {
            hidden: vec![(Mat::zeros(3, 2), vec![0.0; 2])],
            out_w: vec![0.0; 2],
            out_b: 1.75,
        };
        assert_eq!(mlp_forward(&params, &[4.0, -3.0, 2.0]).unwrap(), 1.75);
    }

    #[test]
    fn hand_computed_single_layer() {
        // W = I, b = (1, -1), out_w = (2, 3), out_b = 0.5 on input (2, -4):
        // pre = (3, -5) -> relu (3, 0) -> 2*3 + 3*0 + 0.5 = 6.5.
        let params = MlpParams {
            hidden: vec![(Mat::identity(2), vec![1.0, -1.0])],
            out_w: vec![2.0, 3.0],
            out_b: 0.5,
        };
        assert_eq!(mlp_forward(&params, &[2.0, -4.0]).unwrap(), 6.5);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        // All-negative preactivation: hidden layer contributes nothing.
        let params = MlpParams {
            hidden: vec![(Mat::identity(2), vec![-10.0, -10.0])],
            out_w: vec![5.0, 5.0],
            out_b: -0.25,
        };
        assert_eq!(mlp_forward(&params, &[1.0, 2.0]).unwrap(), -0.25);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = mlp_init(4, &[6, 3], 2).unwrap();
        let batch: Vec<(Vec<f64>, f64)> = (0..4)
            .map(|_| {
                ((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(-1.0..1.0))
            })
            .collect();
        let (_, grads) = mlp_gradients(&params, &batch).unwrap();

        let loss_of = |p: &MlpParams| -> f64 {
            batch
                .iter()
                .map(|(x, y)| {
                    let r = mlp_forward(p, x).unwrap() - y;
                    r * r
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let step = 1e-6;
        // Spot-check a weight in each block plus both biases.
        let mut probe = params.clone();
        let base = probe.hidden[0].0.get(1, 2);
        probe.hidden[0].0.set(1, 2, base + step);
        let plus = loss_of(&probe);
        probe.hidden[0].0.set(1, 2, base - step);
        let minus = loss_of(&probe);
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.hidden[0].0.get(1, 2);
        assert!((numeric - analytic).abs() <= 1e-6 * numeric.abs().max(1.0));

        let mut probe = params.clone();
        probe.out_b += step;
        let plus = loss_of(&probe);
        probe.out_b -= 2.0 * step;
        let minus = loss_of(&probe);
        let numeric = (plus - minus) / (2.0 * step);
        assert!((numeric - grads.out_b).abs() <= 1e-6 * numeric.abs().max(1.0));
    }

    #[test]
    fn init_rejects_unsupported_depths() {
        assert!(mlp_init(4, &[], 0).is_err());
        assert!(mlp_init(4, &[8, 8, 8], 0).is_err());
    }
}
