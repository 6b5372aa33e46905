//! Regression metrics: MSE, MAE, R-squared.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mse: f64,
    pub mae: f64,
    /// 1 - SS_res / SS_tot about the label mean. When the labels have zero
    /// variance this is 1 for a perfect fit and -infinity otherwise (the
    /// degenerate case is reported as a failure, not hidden).
    pub r2: f64,
}

pub fn metrics(predictions: &[f64], labels: &[f64]) -> Result<SplitMetrics> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("metrics inputs"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
    }
    let n = labels.len() as f64;
    let mse = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
    let mae = predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let mean = labels.iter().sum::<f64>() / n;
    let ss_res: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    let ss_tot: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(SplitMetrics { mse, mae, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.r2, 1.0);
    }

    #[test]
    fn mean_predictor_scores_zero_r2() {
        let labels = [1.0, 2.0, 3.0, 6.0];
        let mean = labels.iter().sum::<f64>() / 4.0;
        let m = metrics(&[mean; 4], &labels).unwrap();
        assert!((m.r2 - 0.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_labels_hit_the_sentinel() {
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.r2, f64::NEG_INFINITY);

        let exact = metrics(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(exact.r2, 1.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(metrics(&[], &[]), Err(Error::EmptyInput(_))));
    }
}
