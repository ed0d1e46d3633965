//! Composite Gaussian NLL + MSE objective.

use nalgebra::Vector3;

use super::GaussianForecast;

/// Per-sequence loss and its gradients with respect to the forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub value: f64,
    pub d_mu: Vec<Vector3<f64>>,
    pub d_log_var: Vec<Vector3<f64>>,
}

fn nll_term(mu: f64, lv: f64, y: f64) -> f64 {
    let r = y - mu;
    0.5 * lv + r * r / (2.0 * lv.exp())
}

/// `ρ·L_NLL + ω·L_MSE` over a batch. The NLL sums over steps and
/// coordinates and averages over the batch; the MSE sums squared errors over
/// coordinates and averages over batch and steps.
pub fn batch_loss(forecasts: &[GaussianForecast], truths: &[Vec<Vector3<f64>>], rho: f64, omega: f64) -> f64 {
    let b = forecasts.len() as f64;
    forecasts.iter().zip(truths).map(|(f, t)| sequence_loss(f, t, rho, omega) / b).sum()
}

/// Loss of a single sequence (batch size 1).
pub fn loss(forecast: &GaussianForecast, truth: &[Vector3<f64>], rho: f64, omega: f64) -> f64 {
    sequence_loss(forecast, truth, rho, omega)
}

fn sequence_loss(f: &GaussianForecast, truth: &[Vector3<f64>], rho: f64, omega: f64) -> f64 {
    assert_eq!(f.horizon(), truth.len(), "forecast and truth horizons differ");
    let t_out = truth.len() as f64;
    let mut nll = 0.0;
    let mut mse = 0.0;
    for k in 0..truth.len() {
        for c in 0..3 {
            if rho != 0.0 {
                nll += nll_term(f.mu[k][c], f.log_var[k][c], truth[k][c]);
            }
            let r = truth[k][c] - f.mu[k][c];
            mse += r * r;
        }
    }
    // With ρ = 0 the variance head is unconstrained and may saturate; the
    // NLL is skipped outright so it cannot leak a NaN.
    let nll = if rho != 0.0 { rho * nll } else { 0.0 };
    nll + omega * mse / t_out
}

/// Contribution of one sequence to a batch of size `batch`, with gradients.
pub fn loss_gradient(f: &GaussianForecast, truth: &[Vector3<f64>], rho: f64, omega: f64, batch: usize) -> LossGradient {
    let inv_b = 1.0 / batch as f64;
    let t_out = truth.len() as f64;
    let mut d_mu = Vec::with_capacity(truth.len());
    let mut d_log_var = Vec::with_capacity(truth.len());
    for k in 0..truth.len() {
        let mut gm = Vector3::zeros();
        let mut gl = Vector3::zeros();
        for c in 0..3 {
            let r = f.mu[k][c] - truth[k][c];
            let mse = 2.0 * omega * r / t_out;
            if rho != 0.0 {
                let inv_var = (-f.log_var[k][c]).exp();
                gm[c] = inv_b * (rho * r * inv_var + mse);
                gl[c] = inv_b * rho * (0.5 - 0.5 * r * r * inv_var);
            } else {
                gm[c] = inv_b * mse;
            }
        }
        d_mu.push(gm);
        d_log_var.push(gl);
    }
    LossGradient { value: inv_b * sequence_loss(f, truth, rho, omega), d_mu, d_log_var }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gf(mu: Vec<Vector3<f64>>, lv: f64) -> GaussianForecast {
        let n = mu.len();
        GaussianForecast { mu, log_var: vec![Vector3::repeat(lv); n], dt: 1.0 / 30.0 }
    }

    #[test]
    fn zero_residual_unit_variance_is_zero() {
        let y = vec![Vector3::new(0.3, -0.2, 0.1)];
        assert_eq!(loss(&gf(y.clone(), 0.0), &y, 1.0, 0.0), 0.0);
    }

    #[test]
    fn unit_residual_gives_one_and_a_half() {
        let y = vec![Vector3::new(0.3, -0.2, 0.1)];
        let mu = vec![y[0] + Vector3::repeat(1.0)];
        assert_eq!(loss(&gf(mu, 0.0), &y, 1.0, 0.0), 1.5);
    }

    #[test]
    fn mse_normalisation() {
        let y = vec![Vector3::zeros(); 2];
        let mu = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)];
        // (1 + 4) / T_out
        assert_eq!(loss(&gf(mu, 0.0), &y, 0.0, 1.0), 2.5);
    }

    #[test]
    fn nll_is_stationary_at_residual_variance() {
        let r: f64 = 0.07;
        let y = vec![Vector3::zeros()];
        let mu = vec![Vector3::repeat(r)];
        let at = |lv: f64| loss(&gf(mu.clone(), lv), &y, 1.0, 0.0);
        let best = (r * r).ln();
        let g = loss_gradient(&gf(mu.clone(), best), &y, 1.0, 0.0, 1);
        assert!(g.d_log_var[0].norm() < 1e-12);
        assert!(at(best) < at(best + 0.1) && at(best) < at(best - 0.1));
    }

    #[test]
    fn batch_loss_averages() {
        let y = vec![vec![Vector3::zeros()], vec![Vector3::zeros()]];
        let f = vec![gf(vec![Vector3::repeat(1.0)], 0.0), gf(vec![Vector3::zeros()], 0.0)];
        assert_eq!(batch_loss(&f, &y, 1.0, 0.0), 0.75);
        let parts: f64 = f.iter().zip(&y).map(|(f, y)| loss_gradient(f, y, 1.0, 0.0, 2).value).sum();
        assert_eq!(parts, 0.75);
    }
}
