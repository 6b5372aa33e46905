//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes (1/2D) * ||response - design * w||^2 + lambda * ||w||_1 over
//! coefficients w, one per design column. Columns are standardized
//! internally (zero mean, unit population variance), which makes each
//! coordinate update a single soft-threshold step.

use crate::error::{Error, Result};

const SWEEP_LIMIT: usize = 10_000;
const TOLERANCE: f64 = 1e-8;

/// Result of a lasso solve, with the per-sweep objective recorded so callers
/// can check monotone decrease.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub objective: Vec<f64>,
    pub sweeps: usize,
}

/// Fits lasso coefficients for `columns` (each a length-D predictor)
/// against `response` (length D).
pub fn lasso_fit(columns: &[Vec<f64>], response: &[f64], lambda: f64) -> Result<LassoFit> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!("lasso lambda must be finite and >= 0, got {lambda}")));
    }
    if response.is_empty() {
        return Err(Error::EmptyInput("lasso response"));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "lasso response".into() });
    }
    let rows = response.len();
    for (j, col) in columns.iter().enumerate() {
        if col.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: col.len() });
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("lasso column {j}") });
        }
    }
    let m = columns.len();
    if m == 0 {
        return Ok(LassoFit { coefficients: Vec::new(), objective: Vec::new(), sweeps: 0 });
    }

    // Standardize columns; constant columns are zeroed and never selected.
    let d = rows as f64;
    let std_cols: Vec<Vec<f64>> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / d;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let std = var.sqrt();
            if std < 1e-12 {
                vec![0.0; rows]
            } else {
                col.iter().map(|v| (v - mean) / std).collect()
            }
        })
        .collect();
    let active: Vec<bool> = std_cols.iter().map(|c| c.iter().any(|&v| v != 0.0)).collect();

    let mut w = vec![0.0f64; m];
    let mut residual = response.to_vec();
    let objective_of = |residual: &[f64], w: &[f64]| -> f64 {
        residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * d)
            + lambda * w.iter().map(|x| x.abs()).sum::<f64>()
    };

    let mut objective = Vec::new();
    let mut prev_obj = objective_of(&residual, &w);
    let mut sweeps = 0;
    while sweeps < SWEEP_LIMIT {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..m {
            if !active[j] {
                continue;
            }
            let col = &std_cols[j];
            // rho = (1/D) col . (residual + col * w_j); unit variance makes
            // the curvature term exactly 1.
            let dot: f64 = col.iter().zip(&residual).map(|(x, r)| x * r).sum();
            let rho = dot / d + w[j];
            let new_w = soft_threshold(rho, lambda);
            let delta = new_w - w[j];
            if delta != 0.0 {
                for (r, x) in residual.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                w[j] = new_w;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let obj = objective_of(&residual, &w);
        debug_assert!(
            obj <= prev_obj + 1e-12 * prev_obj.abs().max(1.0),
            "objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        objective.push(obj);
        if max_delta < TOLERANCE {
            break;
        }
    }
    Ok(LassoFit { coefficients: w, objective, sweeps })
}

fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_lambda_kills_every_coefficient() {
        let columns = vec![vec![1.0, -1.0, 2.0, -2.0], vec![0.5, 1.5, -0.5, -1.5]];
        let response = vec![1.0, 2.0, 3.0, 4.0];
        // lambda at least max_j |(1/D) col_std_j . y| forces w = 0.
        let fit = lasso_fit(&columns, &response, 100.0).unwrap();
        assert!(fit.coefficients.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn lambda_zero_on_orthonormal_columns_is_least_squares() {
        // Hadamard-style columns: mean 0, population variance 1, mutually
        // orthogonal, so standardization is the identity and the optimum is
        // w_j = (1/D) col_j . y.
        let columns = vec![
            vec![1.0, 1.0, -1.0, -1.0],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![1.0, -1.0, -1.0, 1.0],
        ];
        let response = vec![2.0, 0.0, 1.0, -3.0];
        let fit = lasso_fit(&columns, &response, 0.0).unwrap();
        let expect: Vec<f64> = columns
            .iter()
            .map(|c| c.iter().zip(&response).map(|(x, y)| x * y).sum::<f64>() / 4.0)
            .collect();
        for (w, e) in fit.coefficients.iter().zip(&expect) {
            assert!((w - e).abs() < 1e-10, "{w} vs {e}");
        }
    }

    #[test]
    fn objective_history_never_increases() {
        let columns = vec![
            vec![0.3, -1.2, 0.8, 2.0, -0.4, 0.1],
            vec![1.1, 0.2, -0.7, 0.5, 0.9, -1.3],
            vec![-0.6, 0.4, 1.5, -0.2, 0.3, 0.8],
        ];
        let response = vec![0.5, -0.1, 1.2, 0.7, -0.9, 0.3];
        let fit = lasso_fit(&columns, &response, 0.05).unwrap();
        for pair in fit.objective.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(lasso_fit(&[], &[], 0.1), Err(Error::EmptyInput(_))));
        assert!(matches!(
            lasso_fit(&[vec![1.0, f64::NAN]], &[1.0, 2.0], 0.1),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(lasso_fit(&[vec![1.0]], &[1.0], -0.5), Err(Error::Config(_))));
        assert!(matches!(
            lasso_fit(&[vec![1.0, 2.0, 3.0]], &[1.0, 2.0], 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
