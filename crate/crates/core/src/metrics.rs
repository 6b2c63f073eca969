//! Misclassification rate, binned calibration error and distance to a
//! ground-truth posterior.

use serde::{Deserialize, Serialize};

use crate::credal::ProbDist;
use crate::data::Truth;
use crate::error::{Error, Result};
use crate::neural::Mlp;

/// Number of confidence bins used for reported calibration errors.
pub const ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Error rate, ECE and reliability-diagram data for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub error_rate: f64,
    pub ece: f64,
    pub bins: Vec<BinStat>,
}

fn check_inputs(predictions: &[ProbDist], labels: &[usize]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: predictions.len(), found: labels.len() });
    }
    Ok(())
}

pub fn error_rate(predictions: &[ProbDist], labels: &[usize]) -> Result<f64> {
    check_inputs(predictions, labels)?;
    let wrong = predictions.iter().zip(labels).filter(|(p, &y)| p.argmax() != y).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// 1-based bin of a confidence: `ceil(c * bins)`, with `c = 0` in bin 1.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).ceil() as usize).clamp(1, bins)
}

/// Expected calibration error over `bins` equal-width, right-closed
/// confidence bins, where the confidence is the top-1 probability.
pub fn ece(predictions: &[ProbDist], labels: &[usize], bins: usize) -> Result<EvalReport> {
    check_inputs(predictions, labels)?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut wrong = 0usize;
    for (p, &y) in predictions.iter().zip(labels) {
        let c = p.max_prob();
        let b = bin_index(c, bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        if p.argmax() == y {
            correct[b] += 1;
        } else {
            wrong += 1;
        }
    }
    let n = predictions.len();
    let mut total = 0.0;
    let stats = (0..bins)
        .map(|b| {
            if count[b] == 0 {
                return BinStat { count: 0, mean_confidence: 0.0, accuracy: 0.0 };
            }
            let m = count[b] as f64;
            let stat = BinStat { count: count[b], mean_confidence: conf_sum[b] / m, accuracy: correct[b] as f64 / m };
            total += m / n as f64 * (stat.accuracy - stat.mean_confidence).abs();
            stat
        })
        .collect();
    Ok(EvalReport { n, error_rate: wrong as f64 / n as f64, ece: total, bins: stats })
}

/// Mean squared difference between the model's and the truth's positive
/// class probability over a grid of scalar inputs.
pub fn fn_mse_to_truth(model: &Mlp, truth: &Truth, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("grid"));
    }
    let mut total = 0.0;
    for &x in grid {
        let predicted = model.predict(&[x])?.probs()[1];
        let target = truth.posterior(&[x])?.probs()[1];
        total += (predicted - target).powi(2);
    }
    Ok(total / grid.len() as f64)
}

/// `points` evenly spaced values covering `[0, 1]`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}
