//! Probabilistic hand-trajectory forecasting.
//!
//! The learned model is an autoregressive LSTM encoder–decoder with a
//! Gaussian head ([`net`]), trained on a composite NLL + MSE objective
//! ([`loss`], [`train`]). Three classical baselines live in [`baselines`];
//! ADE/FDE and interval calibration in [`eval`]; the synthetic corpus
//! generator and CSV recordings in [`synth`].

pub mod baselines;
pub mod checkpoint;
pub mod eval;
pub mod loss;
pub mod net;
pub mod synth;
pub mod train;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{baseline_kalman, baseline_linear, baseline_particle, KalmanConfig, ParticleConfig};
pub use eval::{calibration, evaluate, AdeFde, Coverage, MeanStd};
pub use loss::{loss, loss_gradient, LossGradient};
pub use net::{forecast, NetParams};
pub use train::{train, train_with_loss, TrainConfig, TrainReport};

/// Sampling rate of hand trajectories.
pub const SAMPLE_RATE_HZ: f64 = 30.0;
pub const SAMPLE_DT: f64 = 1.0 / SAMPLE_RATE_HZ;

/// Log-variance used to represent an exactly known position.
pub const ZERO_VARIANCE_LOG_VAR: f64 = -60.0;

/// Observed history `p_{t−T_in+1} … p_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub positions: Vec<Vector3<f64>>,
    /// Timestamp of the last sample, seconds.
    pub t_last: f64,
    pub dt: f64,
}

impl TrajectoryWindow {
    pub fn new(positions: Vec<Vector3<f64>>, t_last: f64, dt: f64) -> Result<Self> {
        let w = Self { positions, t_last, dt };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory window needs at least 2 samples, got {}",
                self.positions.len()
            )));
        }
        if !(self.dt > 0.0) || !self.positions.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("trajectory window has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> Vector3<f64> {
        *self.positions.last().expect("validated window is non-empty")
    }
}

/// Per-step Gaussian over future positions, `Σ(τ) = diag(exp(log_var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    pub mu: Vec<Vector3<f64>>,
    pub log_var: Vec<Vector3<f64>>,
    pub dt: f64,
}

impl GaussianForecast {
    pub fn deterministic(mu: Vec<Vector3<f64>>, dt: f64) -> Self {
        let log_var = vec![Vector3::repeat(ZERO_VARIANCE_LOG_VAR); mu.len()];
        Self { mu, log_var, dt }
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self, k: usize) -> Vector3<f64> {
        self.log_var[k].map(f64::exp)
    }

    pub fn std_dev(&self, k: usize) -> Vector3<f64> {
        self.log_var[k].map(|lv| (0.5 * lv).exp())
    }

    /// Keep only the first `steps` samples.
    pub fn truncated(&self, steps: usize) -> Self {
        let n = steps.min(self.horizon());
        Self { mu: self.mu[..n].to_vec(), log_var: self.log_var[..n].to_vec(), dt: self.dt }
    }
}

/// One supervised example: observed window and the true continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub window: TrajectoryWindow,
    pub truth: Vec<Vector3<f64>>,
}

/// Anything that turns an observed window into a forecast.
pub trait Forecaster {
    fn predict(&mut self, window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast>;
}

pub struct LinearForecaster;

impl Forecaster for LinearForecaster {
    fn predict(&mut self, window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast> {
        baseline_linear(window, horizon)
    }
}

pub struct KalmanForecaster(pub KalmanConfig);

impl Forecaster for KalmanForecaster {
    fn predict(&mut self, window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast> {
        Ok(baseline_kalman(window, horizon, &self.0))
    }
}

/// Particle filter; the seed advances with each call so repeated windows
/// still get fresh, reproducible noise.
pub struct ParticleForecaster {
    pub config: ParticleConfig,
    calls: u64,
}

impl ParticleForecaster {
    pub fn new(config: ParticleConfig) -> Self {
        Self { config, calls: 0 }
    }
}

impl Forecaster for ParticleForecaster {
    fn predict(&mut self, window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast> {
        let cfg = ParticleConfig { seed: self.config.seed.wrapping_add(self.calls), ..self.config.clone() };
        self.calls += 1;
        baseline_particle(window, horizon, &cfg)
    }
}

pub struct NetForecaster {
    pub params: NetParams,
}

impl Forecaster for NetForecaster {
    fn predict(&mut self, window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast> {
        window.validate()?;
        Ok(forecast(&self.params, window, horizon))
    }
}
