//! Minibatch AdamW training with a cosine-annealed step size.

use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_gradient, LossGradient};
use super::net::{backward, forward_with_tape, NetParams, Tape};
use super::{GaussianForecast, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// NLL weight ρ.
    pub rho: f64,
    /// MSE weight ω.
    pub omega: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Input scaling applied to window-relative metres.
    pub scale: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            omega: 1.0,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            hidden: 64,
            layers: 2,
            scale: 10.0,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // ρ = 0 is accepted so the pure-MSE special case can be exercised.
        if !(self.rho >= 0.0 && self.omega >= 0.0 && self.rho + self.omega > 0.0) {
            return Err(Error::Config("loss weights must be nonnegative and not both zero".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive, weight decay nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("epochs, batch size, hidden and layers must be positive".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config("input scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: NetParams,
    /// Mean per-sequence training loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, w: &mut [f64], g: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..w.len() {
            w[i] -= lr * weight_decay * w[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Step size at `epoch` (0-based) of `epochs`.
pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

/// Train with the composite NLL + MSE loss.
pub fn train(data: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    let (rho, omega) = (cfg.rho, cfg.omega);
    train_with_loss(data, cfg, |f, y, b| loss_gradient(f, y, rho, omega, b))
}

/// Train with a caller-supplied per-sequence loss. `loss_fn(forecast,
/// truth, batch_len)` returns the sequence's contribution to the batch loss
/// and its gradients.
pub fn train_with_loss<F>(data: &[Sample], cfg: &TrainConfig, loss_fn: F) -> Result<TrainReport>
where
    F: Fn(&GaussianForecast, &[Vector3<f64>], usize) -> LossGradient,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for s in data {
        s.window.validate()?;
        if s.truth.is_empty() {
            return Err(Error::InvalidInput("training sample has an empty target".into()));
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(cfg.hidden, cfg.layers, cfg.scale, &mut rng);
    let n = params.weights.len();
    let mut opt = AdamW::new(n);
    let mut grad = vec![0.0; n];
    let mut tape = Tape::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let s = &data[i];
                let f = forward_with_tape(&params, &s.window, s.truth.len(), &mut tape);
                let lg = loss_fn(&f, &s.truth, batch.len());
                total += lg.value * batch.len() as f64;
                backward(&params, &tape, &lg.d_mu, &lg.d_log_var, &mut grad);
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let k = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            opt.update(&mut params.weights, &grad, lr, cfg.weight_decay);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !params.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1, loss: mean });
        }
        log::debug!("epoch {}/{}: loss {mean:.6} lr {lr:.3e}", epoch + 1, cfg.epochs);
        epoch_losses.push(mean);
    }

    Ok(TrainReport { params, epoch_losses, seconds: start.elapsed().as_secs_f64() })
}
