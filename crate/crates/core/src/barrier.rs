//! Reactive and predictive barrier constraints and the slack-penalised
//! safety-filter QP.
//!
//! Sign convention: `h = d_min + σ̄ − d` and the safe set is `h ≤ 0`. Each
//! row reads
//!
//! ```text
//!     ûᵀ J_v(q_k) u  ≤  ûᵀ v_h,k − α(h_k) + δ
//! ```
//!
//! where `û` points from the cylinder axis toward the hand and `v_h,k` is
//! the hand velocity at sample `k`. Row 0 is reactive and relaxed by `δ_r`;
//! the predictive rows all share `δ_p`.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::GaussianForecast;
use crate::geometry::{project_covariance, separation_from_point, LinkCylinder};
use crate::kinematics::{Jacobian, JointVector, KinematicChain, Pose, NUM_JOINTS};
use crate::qp::{QpProblem, QpSolver, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CBF")]
    Cbf,
    #[serde(rename = "PCBF")]
    Pcbf,
    #[serde(rename = "UA_PCBF", alias = "UA-PCBF")]
    UaPcbf,
}

impl Method {
    pub fn is_predictive(self) -> bool {
        self != Method::Cbf
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cbf => "CBF",
            Method::Pcbf => "PCBF",
            Method::UaPcbf => "UA_PCBF",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "CBF" => Ok(Method::Cbf),
            "PCBF" => Ok(Method::Pcbf),
            "UA_PCBF" | "UAPCBF" => Ok(Method::UaPcbf),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    pub d_min: f64,
    pub r_cyl: f64,
    pub h_cyl: f64,
    /// Only used for display; the separation is measured to the hand centre.
    pub r_hand: f64,
    pub gamma: f64,
    pub lambda_r: f64,
    pub alpha_gain: f64,
    pub margin_exponent: f64,
    /// Predictive samples `T_out`.
    pub horizon: usize,
    pub dt: f64,
    pub method: Method,
    pub violation_threshold: f64,
    /// Ablation: keep `λ_p = λ_r` regardless of uncertainty.
    pub lambda_p_equals_lambda_r: bool,
    /// Use `exp(½ log σ²)` as the covariance diagonal instead of `exp(log σ²)`.
    pub use_paper_half_exp: bool,
    /// Hold the first nominal command over the rollout instead of
    /// re-evaluating the policy at each predicted state.
    pub open_loop_rollout: bool,
    /// Adds `|u_i| ≤ limit` rows to the QP when set.
    pub joint_speed_limit: Option<f64>,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            d_min: 0.10,
            r_cyl: 0.05,
            h_cyl: 0.15,
            r_hand: 0.08,
            gamma: 5.0,
            lambda_r: 100.0,
            alpha_gain: 125.0,
            margin_exponent: 2.0,
            horizon: 30,
            dt: 1.0 / 30.0,
            method: Method::UaPcbf,
            violation_threshold: 0.010,
            lambda_p_equals_lambda_r: false,
            use_paper_half_exp: false,
            open_loop_rollout: false,
            joint_speed_limit: Some(1.5),
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.d_min, self.r_cyl, self.h_cyl, self.r_hand, self.dt, self.lambda_r, self.alpha_gain];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "d_min, r_cyl, h_cyl, r_hand, dt, lambda_r and alpha_gain must be positive".into(),
            ));
        }
        if !(self.gamma >= 0.0) || !(self.gamma < self.lambda_r) {
            return Err(Error::Config(format!("gamma must lie in [0, lambda_r), got {}", self.gamma)));
        }
        if !(self.margin_exponent > 0.0) || self.horizon == 0 || !(self.violation_threshold >= 0.0) {
            return Err(Error::Config("margin exponent and horizon must be positive".into()));
        }
        if let Some(l) = self.joint_speed_limit {
            if !(l > 0.0) {
                return Err(Error::Config("joint speed limit must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `σ̄ = 0` at `τ = 0`, else `min(γ·σ_proj, d_min)`.
pub fn clamp_uncertainty(sigma_proj: f64, tau_index: usize, gamma: f64, d_min: f64) -> f64 {
    if tau_index == 0 {
        0.0
    } else {
        (gamma * sigma_proj).min(d_min)
    }
}

/// `h = d_min + σ̄ − d`; positive values are violations.
pub fn barrier_value(d: f64, sigma_bar: f64, d_min: f64) -> f64 {
    d_min + sigma_bar - d
}

/// `λ_p = λ_r − γ·σ̄/d_min`.
pub fn lambda_p(lambda_r: f64, gamma: f64, sigma_bar: f64, d_min: f64) -> f64 {
    lambda_r - gamma * (sigma_bar / d_min)
}

/// Margin `m(τ) = τ^e` on the time to the first predicted violation.
pub fn margin(tau: f64, exponent: f64) -> f64 {
    tau.max(0.0).powf(exponent)
}

/// Produces the nominal joint command at a (possibly predicted) state.
pub trait NominalPolicy: Clone {
    fn command(&mut self, t: f64, q: &JointVector, tcp: &Pose, jacobian: &Jacobian) -> JointVector;
}

/// Always returns the same command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub JointVector);

impl NominalPolicy for ConstantPolicy {
    fn command(&mut self, _: f64, _: &JointVector, _: &Pose, _: &Jacobian) -> JointVector {
        self.0
    }
}

/// Barrier quantities at one rollout sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierEvaluation {
    pub tau_index: usize,
    pub time: f64,
    pub q: JointVector,
    pub tcp: Vector3<f64>,
    pub hand: Vector3<f64>,
    pub d: f64,
    pub sigma_bar: f64,
    pub h: f64,
    pub u_hat: Vector3<f64>,
    /// `L_g h = J_cᵀ û` with `J_c` the Jacobian of the closest axis point;
    /// the row coefficients on `u`.
    pub grad_q: JointVector,
    /// `ûᵀ v_h`, so that `L_f h = −hand_velocity_term`.
    pub hand_velocity_term: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub evals: Vec<BarrierEvaluation>,
    /// Absolute time `R` of the first sample with `h > 0`, else the
    /// horizon end.
    pub earliest_violation: f64,
    pub t: f64,
    /// Nominal command at the current state.
    pub u_nom: JointVector,
}

/// Hand samples `[p_t, μ_1, …, μ_T]` with covariance diagonals (zero at
/// `τ = 0`) and forward-difference velocities.
struct HandTrack {
    positions: Vec<Vector3<f64>>,
    cov: Vec<Vector3<f64>>,
    velocity: Vec<Vector3<f64>>,
}

fn hand_track(hand_now: &Vector3<f64>, forecast: Option<&GaussianForecast>, cfg: &SafetyConfig) -> HandTrack {
    let mut positions = vec![*hand_now];
    let mut cov = vec![Vector3::zeros()];
    if let Some(f) = forecast {
        for k in 0..cfg.horizon {
            positions.push(f.mu[k]);
            cov.push(if cfg.use_paper_half_exp { f.std_dev(k) } else { f.variance(k) });
        }
    }
    let n = positions.len();
    let velocity = (0..n)
        .map(|k| match n {
            1 => Vector3::zeros(),
            _ if k + 1 < n => (positions[k + 1] - positions[k]) / cfg.dt,
            _ => (positions[k] - positions[k - 1]) / cfg.dt,
        })
        .collect();
    HandTrack { positions, cov, velocity }
}

/// Linear Jacobian of a point rigidly attached to the TCP at offset `r`:
/// `J_v − [r]× J_ω`.
fn point_jacobian(jac: &Jacobian, r: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
    jac.linear() - r.cross_matrix() * jac.angular()
}

fn evaluate_sample(
    k: usize,
    t: f64,
    q: &JointVector,
    tcp: &Pose,
    jac: &Jacobian,
    track: &HandTrack,
    cfg: &SafetyConfig,
) -> BarrierEvaluation {
    let cyl = LinkCylinder::attached_to_tcp(tcp, cfg.h_cyl, cfg.r_cyl);
    let hand = track.positions[k];
    let sep = separation_from_point(&hand, &cyl);
    let sigma_bar = match cfg.method {
        Method::UaPcbf => clamp_uncertainty(project_covariance(&track.cov[k], &sep.u_hat), k, cfg.gamma, cfg.d_min),
        _ => 0.0,
    };
    BarrierEvaluation {
        tau_index: k,
        time: t,
        q: *q,
        tcp: tcp.position,
        hand,
        d: sep.distance,
        sigma_bar,
        h: barrier_value(sep.distance, sigma_bar, cfg.d_min),
        u_hat: sep.u_hat,
        grad_q: point_jacobian(jac, &(sep.closest_axis_point - tcp.position)).transpose() * sep.u_hat,
        hand_velocity_term: sep.u_hat.dot(&track.velocity[k]),
        degenerate: sep.degenerate,
    }
}

/// Integrate the nominal policy over the forecast horizon and evaluate the
/// barrier at every sample. CBF mode evaluates only the current state, with
/// the hand treated as static.
pub fn predictive_rollout<P: NominalPolicy>(
    chain: &KinematicChain,
    q: &JointVector,
    t: f64,
    policy: &P,
    hand_now: &Vector3<f64>,
    forecast: Option<&GaussianForecast>,
    cfg: &SafetyConfig,
) -> Result<Rollout> {
    let forecast = if cfg.method.is_predictive() {
        let f = forecast.ok_or_else(|| Error::InvalidInput(format!("{} needs a forecast", cfg.method)))?;
        if f.horizon() < cfg.horizon {
            return Err(Error::InvalidInput(format!(
                "forecast horizon {} shorter than configured {}",
                f.horizon(),
                cfg.horizon
            )));
        }
        Some(f)
    } else {
        None
    };
    let track = hand_track(hand_now, forecast, cfg);
    let samples = track.positions.len();

    let mut policy = policy.clone();
    let mut q_k = *q;
    let (mut tcp, mut jac) = chain.pose_and_jacobian(&q_k);
    let u_nom = policy.command(t, &q_k, &tcp, &jac);
    let mut u_k = u_nom;
    let mut evals = Vec::with_capacity(samples);
    for k in 0..samples {
        let t_k = t + k as f64 * cfg.dt;
        if k > 0 {
            q_k += u_k * cfg.dt;
            (tcp, jac) = chain.pose_and_jacobian(&q_k);
            if !cfg.open_loop_rollout {
                u_k = policy.command(t_k, &q_k, &tcp, &jac);
            }
        }
        evals.push(evaluate_sample(k, t_k, &q_k, &tcp, &jac, &track, cfg));
    }
    let earliest_violation =
        evals.iter().find(|e| e.h > 0.0).map(|e| e.time).unwrap_or(t + cfg.horizon as f64 * cfg.dt);
    Ok(Rollout { evals, earliest_violation, t, u_nom })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slack {
    Reactive,
    Predictive,
}

/// `coeffs · u − δ ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub tau_index: usize,
    pub coeffs: JointVector,
    pub rhs: f64,
    pub slack: Slack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub lambda_r: f64,
    pub lambda_p: f64,
    /// Samples dropped because the hand centre lay on the cylinder axis.
    pub skipped: Vec<usize>,
}

/// Turn rollout evaluations into QP rows. The reactive row uses `h` as is;
/// predictive rows use `h − m(R − t)`.
pub fn assemble_constraints(rollout: &Rollout, cfg: &SafetyConfig) -> ConstraintSet {
    let m = margin(rollout.earliest_violation - rollout.t, cfg.margin_exponent);
    let mut rows = Vec::with_capacity(rollout.evals.len());
    let mut skipped = Vec::new();
    let mut sigma_max: f64 = 0.0;
    for e in &rollout.evals {
        if e.degenerate {
            log::warn!("hand centre on the cylinder axis at sample {}; row skipped", e.tau_index);
            skipped.push(e.tau_index);
            continue;
        }
        let (h, slack) = if e.tau_index == 0 { (e.h, Slack::Reactive) } else { (e.h - m, Slack::Predictive) };
        sigma_max = sigma_max.max(e.sigma_bar);
        rows.push(ConstraintRow {
            tau_index: e.tau_index,
            coeffs: e.grad_q,
            rhs: e.hand_velocity_term - cfg.alpha_gain * h,
            slack,
        });
    }
    let lambda_p = if cfg.lambda_p_equals_lambda_r {
        cfg.lambda_r
    } else {
        lambda_p(cfg.lambda_r, cfg.gamma, sigma_max, cfg.d_min)
    };
    ConstraintSet { rows, lambda_r: cfg.lambda_r, lambda_p, skipped }
}

/// Inaccurate QP solutions with residuals below this are still applied.
/// Barrier rows carry multipliers in the hundreds, so the solver's absolute
/// complementarity test can trip on otherwise exact solutions.
const USABLE_KKT: f64 = 1e-6;

const SLACK_R: usize = NUM_JOINTS;
const SLACK_P: usize = NUM_JOINTS + 1;
const NUM_VARS: usize = NUM_JOINTS + 2;

/// `min ½‖u − u_nom‖² + λ_r δ_r² + λ_p δ_p²` over `(u, δ_r, δ_p)`.
pub fn build_qp(u_nom: &JointVector, set: &ConstraintSet, cfg: &SafetyConfig) -> QpProblem {
    let mut hessian = DMatrix::identity(NUM_VARS, NUM_VARS);
    hessian[(SLACK_R, SLACK_R)] = 2.0 * set.lambda_r;
    hessian[(SLACK_P, SLACK_P)] = 2.0 * set.lambda_p;
    let mut linear = DVector::zeros(NUM_VARS);
    linear.rows_mut(0, NUM_JOINTS).copy_from(&(-u_nom));

    let box_rows = if cfg.joint_speed_limit.is_some() { 2 * NUM_JOINTS } else { 0 };
    let m = set.rows.len() + box_rows;
    let mut a = DMatrix::zeros(m, NUM_VARS);
    let mut b = DVector::zeros(m);
    for (i, r) in set.rows.iter().enumerate() {
        for j in 0..NUM_JOINTS {
            a[(i, j)] = r.coeffs[j];
        }
        a[(i, if r.slack == Slack::Reactive { SLACK_R } else { SLACK_P })] = -1.0;
        b[i] = r.rhs;
    }
    if let Some(limit) = cfg.joint_speed_limit {
        let base = set.rows.len();
        for j in 0..NUM_JOINTS {
            a[(base + 2 * j, j)] = 1.0;
            b[base + 2 * j] = limit;
            a[(base + 2 * j + 1, j)] = -1.0;
            b[base + 2 * j + 1] = limit;
        }
    }
    let mut lb = vec![None; NUM_VARS];
    lb[SLACK_R] = Some(0.0);
    lb[SLACK_P] = Some(0.0);
    QpProblem::new(hessian, linear, a, b).with_lower_bounds(lb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub u_safe: JointVector,
    pub u_nom: JointVector,
    pub delta_r: f64,
    pub delta_p: f64,
    pub lambda_p: f64,
    /// One flag per barrier row: active at the solution.
    pub constraints_active: Vec<bool>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// The QP failed and the previous command was reused.
    pub degraded: bool,
    pub rollout: Rollout,
}

impl FilterResult {
    pub fn h_now(&self) -> f64 {
        self.rollout.evals[0].h
    }

    pub fn h_range(&self) -> (f64, f64) {
        self.rollout.evals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.h), hi.max(e.h)))
    }

    pub fn sigma_bar_profile(&self) -> Vec<f64> {
        self.rollout.evals.iter().map(|e| e.sigma_bar).collect()
    }
}

/// Stateful wrapper holding the solver, the previous command for fallback
/// and the previous active set for warm starts.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    pub chain: KinematicChain,
    pub cfg: SafetyConfig,
    solver: QpSolver,
    previous: JointVector,
    warm: Vec<usize>,
}

impl SafetyFilter {
    pub fn new(chain: KinematicChain, cfg: SafetyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { chain, cfg, solver: QpSolver::default(), previous: JointVector::zeros(), warm: Vec::new() })
    }

    pub fn filter<P: NominalPolicy>(
        &mut self,
        t: f64,
        q: &JointVector,
        policy: &P,
        hand_now: &Vector3<f64>,
        forecast: Option<&GaussianForecast>,
    ) -> Result<FilterResult> {
        let rollout = predictive_rollout(&self.chain, q, t, policy, hand_now, forecast, &self.cfg)?;
        let set = assemble_constraints(&rollout, &self.cfg);
        let qp = build_qp(&rollout.u_nom, &set, &self.cfg);
        let warm: Vec<usize> = self.warm.iter().copied().filter(|&i| i < qp.a.nrows() + 2).collect();
        let sol = self.solver.solve_warm(&qp, &warm)?;
        let degraded = !(sol.is_solved() || (sol.status == QpStatus::Inaccurate && sol.kkt.max() < USABLE_KKT));
        let u_safe =
            if degraded { self.previous } else { JointVector::from_iterator(sol.x.iter().take(NUM_JOINTS).copied()) };
        if degraded {
            log::warn!("safety QP returned {:?} at t = {t:.3}; holding previous command", sol.status);
        } else {
            self.warm = sol.active_set.clone();
        }
        self.previous = u_safe;
        let constraints_active = (0..set.rows.len()).map(|i| sol.active_set.contains(&i)).collect();
        Ok(FilterResult {
            u_safe,
            u_nom: rollout.u_nom,
            delta_r: if degraded { 0.0 } else { sol.x[SLACK_R].max(0.0) },
            delta_p: if degraded { 0.0 } else { sol.x[SLACK_P].max(0.0) },
            lambda_p: set.lambda_p,
            constraints_active,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            degraded,
            rollout,
        })
    }

    pub fn reset(&mut self) {
        self.previous = JointVector::zeros();
        self.warm.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::inverse_kinematics;
    use nalgebra::Matrix3;

    fn down() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
    }

    fn start_q(chain: &KinematicChain, p: Vector3<f64>) -> JointVector {
        let seed = JointVector::new(0.0, -1.2, 1.6, -1.97, -1.57, 0.0);
        let (q, err) = inverse_kinematics(chain, &seed, &Pose::new(p, down()), 200);
        assert!(err < 1e-8);
        q
    }

    fn static_forecast(p: Vector3<f64>, lv: f64) -> GaussianForecast {
        GaussianForecast { mu: vec![p; 30], log_var: vec![Vector3::repeat(lv); 30], dt: 1.0 / 30.0 }
    }

    #[test]
    fn scalar_laws() {
        assert_eq!(clamp_uncertainty(5.0, 0, 5.0, 0.1), 0.0);
        assert!((clamp_uncertainty(0.008, 3, 5.0, 0.1) - 0.04).abs() < 1e-15);
        assert_eq!(clamp_uncertainty(0.06, 3, 5.0, 0.1), 0.1);
        assert!((barrier_value(0.3, 0.0, 0.1) + 0.2).abs() < 1e-15);
        assert!(barrier_value(0.12, 0.02, 0.1).abs() < 1e-15);
        assert!((barrier_value(0.05, 0.02, 0.1) - 0.07).abs() < 1e-15);
        assert_eq!(lambda_p(100.0, 5.0, 0.0, 0.1), 100.0);
        assert_eq!(lambda_p(100.0, 5.0, 0.1, 0.1), 95.0);
        assert_eq!(lambda_p(100.0, 0.0, 0.07, 0.1), 100.0);
    }

    #[test]
    fn far_hand_leaves_command_untouched() {
        let chain = KinematicChain::default();
        let q = start_q(&chain, Vector3::new(0.45, 0.0, 0.45));
        let hand = Vector3::new(2.0, 1.0, 0.3);
        let u = JointVector::new(0.2, -0.1, 0.05, 0.3, -0.2, 0.1);
        for method in [Method::Cbf, Method::Pcbf, Method::UaPcbf] {
            let cfg = SafetyConfig { method, ..Default::default() };
            let mut f = SafetyFilter::new(chain.clone(), cfg).unwrap();
            let r = f.filter(0.0, &q, &ConstantPolicy(u), &hand, Some(&static_forecast(hand, -4.0))).unwrap();
            assert_eq!(r.u_safe, u, "{method}");
            assert_eq!((r.delta_r, r.delta_p), (0.0, 0.0));
        }
    }

    #[test]
    fn static_safe_state_has_strict_slack_at_rest() {
        let chain = KinematicChain::default();
        let q = start_q(&chain, Vector3::new(0.45, 0.0, 0.45));
        let hand = Vector3::new(0.45, 0.0, 0.1);
        let cfg = SafetyConfig { method: Method::Cbf, ..Default::default() };
        let r = predictive_rollout(&chain, &q, 0.0, &ConstantPolicy(JointVector::zeros()), &hand, None, &cfg).unwrap();
        let set = assemble_constraints(&r, &cfg);
        assert_eq!(set.rows.len(), 1);
        assert!(r.evals[0].h < 0.0);
        assert!(set.rows[0].rhs > 0.0 && (set.rows[0].rhs + cfg.alpha_gain * r.evals[0].h).abs() < 1e-15);
    }

    #[test]
    fn earliest_violation_found_by_scan() {
        let chain = KinematicChain::default();
        let q = start_q(&chain, Vector3::new(0.45, 0.0, 0.45));
        let cfg = SafetyConfig { method: Method::Pcbf, ..Default::default() };
        // Hand rises toward the tool tip at 0.6 m/s from 0.25 m below it.
        let start = Vector3::new(0.45, 0.0, 0.20);
        let mu: Vec<_> = (1..=30).map(|k| start + Vector3::z() * (0.02 * k as f64)).collect();
        let f = GaussianForecast::deterministic(mu, cfg.dt);
        let r =
            predictive_rollout(&chain, &q, 1.0, &ConstantPolicy(JointVector::zeros()), &start, Some(&f), &cfg).unwrap();
        let first = r.evals.iter().position(|e| e.h > 0.0).unwrap();
        assert_eq!(r.earliest_violation, 1.0 + first as f64 * cfg.dt);
        assert!(first > 0 && r.evals[first - 1].h <= 0.0);
    }

    #[test]
    fn teleported_hand_needs_slack() {
        let chain = KinematicChain::default();
        let q = start_q(&chain, Vector3::new(0.45, 0.0, 0.45));
        let tcp = chain.forward_kinematics(&q).position;
        let hand = tcp + Vector3::new(0.06, 0.0, 0.0);
        let cfg = SafetyConfig { method: Method::Cbf, ..Default::default() };
        let mut f = SafetyFilter::new(chain, cfg).unwrap();
        let r = f.filter(0.0, &q, &ConstantPolicy(JointVector::zeros()), &hand, None).unwrap();
        assert_eq!(r.qp_status, QpStatus::Solved);
        assert!(r.delta_r > 0.0);
        assert!(r.u_safe.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gamma_zero_matches_pcbf_rows() {
        let chain = KinematicChain::default();
        let q = start_q(&chain, Vector3::new(0.4, 0.1, 0.4));
        let hand = Vector3::new(0.42, 0.05, 0.22);
        let f = static_forecast(hand, -5.0);
        let u = ConstantPolicy(JointVector::new(0.1, 0.2, -0.1, 0.0, 0.1, 0.0));
        let rows = |method, gamma| {
            let cfg = SafetyConfig { method, gamma, ..Default::default() };
            let r = predictive_rollout(&chain, &q, 0.0, &u, &hand, Some(&f), &cfg).unwrap();
            assemble_constraints(&r, &cfg)
        };
        assert_eq!(rows(Method::UaPcbf, 0.0), rows(Method::Pcbf, 0.0));
        assert_ne!(rows(Method::UaPcbf, 5.0).rows, rows(Method::Pcbf, 5.0).rows);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Cbf, Method::Pcbf, Method::UaPcbf] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
    }
}
