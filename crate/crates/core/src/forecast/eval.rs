//! Displacement errors and interval calibration.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::GaussianForecast;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (0 for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdeFde {
    pub ade: MeanStd,
    pub fde: MeanStd,
}

/// Per-sequence `(ADE, FDE)`.
pub fn displacement_errors(pred: &[Vector3<f64>], truth: &[Vector3<f64>]) -> (f64, f64) {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    assert!(!pred.is_empty(), "empty horizon");
    let d: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).norm()).collect();
    (d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1])
}

/// ADE and FDE over a set of forecasts, each as mean ± std across sequences.
/// Every forecast is scored over the length of its truth.
pub fn evaluate(predictions: &[GaussianForecast], truths: &[Vec<Vector3<f64>>]) -> AdeFde {
    assert_eq!(predictions.len(), truths.len(), "prediction and truth counts differ");
    let (ade, fde): (Vec<f64>, Vec<f64>) =
        predictions.iter().zip(truths).map(|(p, t)| displacement_errors(&p.mu[..t.len()], t)).unzip();
    AdeFde { ade: MeanStd::of(&ade), fde: MeanStd::of(&fde) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub level: f64,
    pub z: f64,
    /// Fraction of (sample, step, axis) triples inside `μ ± z·σ`.
    pub coverage: f64,
}

pub const DEFAULT_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Two-sided standard-normal quantile for a central interval.
pub fn z_score(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + 0.5 * level)
}

/// Per-coordinate interval coverage: each axis of each step counts as one
/// trial.
pub fn calibration(forecasts: &[GaussianForecast], truths: &[Vec<Vector3<f64>>], levels: &[f64]) -> Vec<Coverage> {
    assert_eq!(forecasts.len(), truths.len(), "forecast and truth counts differ");
    let z: Vec<f64> = levels.iter().map(|&l| z_score(l)).collect();
    let mut hits = vec![0usize; levels.len()];
    let mut total = 0usize;
    for (f, t) in forecasts.iter().zip(truths) {
        for (k, y) in t.iter().enumerate() {
            let sd = f.std_dev(k);
            for c in 0..3 {
                let r = (y[c] - f.mu[k][c]).abs();
                total += 1;
                for (h, zl) in hits.iter_mut().zip(&z) {
                    if r <= zl * sd[c] {
                        *h += 1;
                    }
                }
            }
        }
    }
    levels
        .iter()
        .zip(z)
        .zip(hits)
        .map(|((&level, z), h)| Coverage { level, z, coverage: if total == 0 { 0.0 } else { h as f64 / total as f64 } })
        .collect()
}

/// Number of 30 Hz steps covering `ms` milliseconds.
pub fn horizon_steps(ms: f64, dt: f64) -> usize {
    (ms / 1000.0 / dt).round().max(1.0) as usize
}
