//! Classical forecasters: last-velocity extrapolation, a constant-velocity
//! Kalman filter, and a bootstrap particle filter.
//!
//! Both filters model each axis independently with state `[position,
//! velocity]`, white-acceleration process noise of spectral density `q` and
//! position measurements with standard deviation `r`. They are initialised
//! from the first two samples.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GaussianForecast, TrajectoryWindow, ZERO_VARIANCE_LOG_VAR};
use crate::error::{Error, Result};

/// `p_{t+k} = p_t + k·(p_t − p_{t−1})`, with `log σ² = 0`.
pub fn baseline_linear(window: &TrajectoryWindow, horizon: usize) -> Result<GaussianForecast> {
    window.validate()?;
    let n = window.len();
    let last = window.positions[n - 1];
    let step = last - window.positions[n - 2];
    let mu = (1..=horizon).map(|k| last + step * k as f64).collect();
    Ok(GaussianForecast { mu, log_var: vec![Vector3::zeros(); horizon], dt: window.dt })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Acceleration noise spectral density (m²/s³).
    pub process_noise: f64,
    /// Measurement standard deviation (m).
    pub measurement_std: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { process_noise: 1.0, measurement_std: 0.002 }
    }
}

fn transition(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

fn process_cov(q: f64, dt: f64) -> Matrix2<f64> {
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    Matrix2::new(dt3 / 3.0, dt2 / 2.0, dt2 / 2.0, dt) * q
}

/// Two-point initialisation: `x = [z₁, (z₁ − z₀)/dt]` and the covariance
/// implied by two independent measurements of variance `R`.
fn two_point_init(z0: f64, z1: f64, r2: f64, dt: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let x = Vector2::new(z1, (z1 - z0) / dt);
    let p = Matrix2::new(r2, r2 / dt, r2 / dt, 2.0 * r2 / (dt * dt));
    (x, p)
}

pub fn baseline_kalman(window: &TrajectoryWindow, horizon: usize, cfg: &KalmanConfig) -> GaussianForecast {
    let dt = window.dt;
    let f = transition(dt);
    let q = process_cov(cfg.process_noise, dt);
    let r2 = cfg.measurement_std * cfg.measurement_std;
    let mut mu = vec![Vector3::zeros(); horizon];
    let mut log_var = vec![Vector3::zeros(); horizon];
    for axis in 0..3 {
        let z = |i: usize| window.positions[i][axis];
        let (mut x, mut p) = two_point_init(z(0), z(1), r2, dt);
        for i in 2..window.len() {
            x = f * x;
            p = f * p * f.transpose() + q;
            let s = p[(0, 0)] + r2;
            if s > 0.0 {
                let k = Vector2::new(p[(0, 0)], p[(1, 0)]) / s;
                x += k * (z(i) - x[0]);
                // Joseph form keeps P symmetric and PSD.
                let i_kh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
                p = i_kh * p * i_kh.transpose() + k * k.transpose() * r2;
            }
        }
        for step in 0..horizon {
            x = f * x;
            p = f * p * f.transpose() + q;
            mu[step][axis] = x[0];
            log_var[step][axis] = p[(0, 0)].max(ZERO_VARIANCE_LOG_VAR.exp()).ln();
        }
    }
    GaussianForecast { mu, log_var, dt }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleConfig {
    pub particles: usize,
    pub process_noise: f64,
    pub measurement_std: f64,
    pub seed: u64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self { particles: 500, process_noise: 1.0, measurement_std: 0.002, seed: 0 }
    }
}

/// Residual magnitude treated as an exact match when measurements are noiseless.
const EXACT_MATCH_TOL: f64 = 1e-9;

/// Lower-triangular `L` with `L Lᵀ = M` for a PSD 2×2 matrix.
fn chol2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let l00 = m[(0, 0)].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { m[(1, 0)] / l00 } else { 0.0 };
    let l11 = (m[(1, 1)] - l10 * l10).max(0.0).sqrt();
    Matrix2::new(l00, 0.0, l10, l11)
}

struct Cloud {
    /// Per particle `[x, vx, y, vy, z, vz]`.
    states: Vec<[f64; 6]>,
}

impl Cloud {
    fn propagate<R: Rng>(&mut self, f: &Matrix2<f64>, lq: &Matrix2<f64>, rng: &mut R) {
        for s in &mut self.states {
            for axis in 0..3 {
                let x = f * Vector2::new(s[2 * axis], s[2 * axis + 1]);
                let n = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
                let x = x + lq * n;
                s[2 * axis] = x[0];
                s[2 * axis + 1] = x[1];
            }
        }
    }

    fn position(s: &[f64; 6]) -> Vector3<f64> {
        Vector3::new(s[0], s[2], s[4])
    }

    /// Normalised weights for measurement `z`, or `None` if all vanish.
    fn weights(&self, z: &Vector3<f64>, r: f64) -> Option<Vec<f64>> {
        let mut w: Vec<f64> = if r > 0.0 {
            let logw: Vec<f64> =
                self.states.iter().map(|s| -0.5 * (Self::position(s) - z).norm_squared() / (r * r)).collect();
            let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return None;
            }
            logw.iter().map(|l| (l - max).exp()).collect()
        } else {
            self.states
                .iter()
                .map(|s| if (Self::position(s) - z).norm() <= EXACT_MATCH_TOL { 1.0 } else { 0.0 })
                .collect()
        };
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        w.iter_mut().for_each(|v| *v /= total);
        Some(w)
    }

    fn systematic_resample<R: Rng>(&mut self, weights: &[f64], rng: &mut R) {
        let n = self.states.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut cum = weights[0];
        let mut j = 0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            while u > cum && j + 1 < n {
                j += 1;
                cum += weights[j];
            }
            out.push(self.states[j]);
            u += step;
        }
        self.states = out;
    }
}

pub fn baseline_particle(window: &TrajectoryWindow, horizon: usize, cfg: &ParticleConfig) -> Result<GaussianForecast> {
    window.validate()?;
    if cfg.particles == 0 {
        return Err(Error::Config("particle count must be positive".into()));
    }
    let dt = window.dt;
    let f = transition(dt);
    let lq = chol2(&process_cov(cfg.process_noise, dt));
    let r = cfg.measurement_std;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let inits: Vec<_> = (0..3)
        .map(|a| {
            let (x, p) = two_point_init(window.positions[0][a], window.positions[1][a], r * r, dt);
            (x, chol2(&p))
        })
        .collect();
    let states = (0..cfg.particles)
        .map(|_| {
            let mut s = [0.0; 6];
            for (a, (x, l)) in inits.iter().enumerate() {
                let n = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
                let v = x + l * n;
                s[2 * a] = v[0];
                s[2 * a + 1] = v[1];
            }
            s
        })
        .collect();
    let mut cloud = Cloud { states };

    for i in 2..window.len() {
        cloud.propagate(&f, &lq, &mut rng);
        let w = cloud.weights(&window.positions[i], r).ok_or(Error::ParticleDegeneracy { step: i })?;
        cloud.systematic_resample(&w, &mut rng);
    }

    let n = cfg.particles as f64;
    let floor = ZERO_VARIANCE_LOG_VAR.exp();
    let mut mu = Vec::with_capacity(horizon);
    let mut log_var = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        cloud.propagate(&f, &lq, &mut rng);
        let mean = cloud.states.iter().map(Cloud::position).sum::<Vector3<f64>>() / n;
        let var = cloud.states.iter().map(|s| (Cloud::position(s) - mean).map(|v| v * v)).sum::<Vector3<f64>>() / n;
        mu.push(mean);
        log_var.push(var.map(|v| v.max(floor).ln()));
    }
    Ok(GaussianForecast { mu, log_var, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cv_window(n: usize) -> TrajectoryWindow {
        let v = Vector3::new(0.3, -0.1, 0.2);
        let p0 = Vector3::new(0.4, 0.1, 0.2);
        let dt = 1.0 / 30.0;
        TrajectoryWindow::new((0..n).map(|i| p0 + v * (i as f64 * dt)).collect(), 0.5, dt).unwrap()
    }

    #[test]
    fn linear_continues_constant_velocity() {
        let w = cv_window(15);
        let f = baseline_linear(&w, 30).unwrap();
        let truth = cv_window(45);
        for k in 0..30 {
            assert_relative_eq!(f.mu[k], truth.positions[15 + k], epsilon = 1e-12);
            assert_eq!(f.log_var[k], Vector3::zeros());
        }
    }

    #[test]
    fn linear_on_stationary_window_holds() {
        let p = Vector3::new(0.1, 0.2, 0.3);
        let w = TrajectoryWindow::new(vec![p; 4], 0.0, 1.0 / 30.0).unwrap();
        assert!(baseline_linear(&w, 5).unwrap().mu.iter().all(|m| *m == p));
    }

    #[test]
    fn kalman_matches_constant_velocity_and_grows_variance() {
        let w = cv_window(15);
        let f = baseline_kalman(&w, 30, &KalmanConfig::default());
        let truth = cv_window(45);
        assert!((f.mu[29] - truth.positions[44]).norm() < 1e-6);
        for k in 1..30 {
            assert!((0..3).all(|c| f.log_var[k][c] > f.log_var[k - 1][c]));
        }
    }

    #[test]
    fn noiseless_particle_filter_collapses_to_linear() {
        let w = cv_window(10);
        let cfg = ParticleConfig { particles: 50, process_noise: 0.0, measurement_std: 0.0, seed: 1 };
        let pf = baseline_particle(&w, 20, &cfg).unwrap();
        let lin = baseline_linear(&w, 20).unwrap();
        for k in 0..20 {
            assert!((pf.mu[k] - lin.mu[k]).norm() < 1e-6);
        }
    }

    #[test]
    fn particle_filter_is_seeded() {
        let w = cv_window(8);
        let cfg = ParticleConfig { particles: 200, ..Default::default() };
        assert_eq!(baseline_particle(&w, 5, &cfg).unwrap(), baseline_particle(&w, 5, &cfg).unwrap());
    }

    #[test]
    fn noiseless_filter_rejects_inconsistent_measurements() {
        let mut w = cv_window(6);
        w.positions[4].x += 0.05;
        let cfg = ParticleConfig { particles: 20, process_noise: 0.0, measurement_std: 0.0, seed: 0 };
        assert!(matches!(baseline_particle(&w, 3, &cfg), Err(Error::ParticleDegeneracy { step: 4 })));
    }
}
