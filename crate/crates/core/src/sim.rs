//! Discrete-time kinematic world and the scenario driver.
//!
//! Each control step measures the hand, forecasts its motion, filters the
//! nominal command through the safety QP and integrates `q' = q + u·dt`.

use std::collections::VecDeque;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::barrier::{FilterResult, Method, NominalPolicy, SafetyConfig, SafetyFilter};
use crate::controller::{nominal_joint_velocity, nominal_twist, GainConfig};
use crate::error::{Error, Result};
use crate::forecast::synth::{read_recording_csv, TrapezoidProfile};
use crate::forecast::{
    Forecaster, GaussianForecast, KalmanConfig, KalmanForecaster, LinearForecaster, NetForecaster, NetParams,
    ParticleConfig, ParticleForecaster, TrajectoryWindow,
};
use crate::geometry::{separation_from_point, LinkCylinder};
use crate::kinematics::{inverse_kinematics, Jacobian, JointVector, KinematicChain, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub q: JointVector,
    /// Measured hand positions, oldest first.
    pub hand_history: VecDeque<(f64, Vector3<f64>)>,
    pub tcp: Pose,
    capacity: usize,
}

impl WorldState {
    pub fn new(chain: &KinematicChain, q: JointVector, t: f64, capacity: usize) -> Self {
        Self { t, q, hand_history: VecDeque::with_capacity(capacity), tcp: chain.forward_kinematics(&q), capacity }
    }

    pub fn push_hand(&mut self, t: f64, p: Vector3<f64>) {
        if self.hand_history.len() == self.capacity {
            self.hand_history.pop_front();
        }
        self.hand_history.push_back((t, p));
    }

    /// The latest `t_in` measurements, if that many exist.
    pub fn window(&self, t_in: usize, dt: f64) -> Option<TrajectoryWindow> {
        let n = self.hand_history.len();
        if n < t_in || t_in < 2 {
            return None;
        }
        let positions = self.hand_history.iter().skip(n - t_in).map(|(_, p)| *p).collect();
        Some(TrajectoryWindow { positions, t_last: self.hand_history[n - 1].0, dt })
    }
}

/// Explicit Euler: `q' = q + u·dt`, TCP recomputed, clock advanced.
pub fn step(world: &mut WorldState, chain: &KinematicChain, u: &JointVector, dt: f64) {
    world.q += u * dt;
    world.tcp = chain.forward_kinematics(&world.q);
    world.t += dt;
}

/// Periodic rest → trapezoidal stroke → hold → return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstScript {
    pub rest: [f64; 3],
    pub direction: [f64; 3],
    pub stroke: f64,
    pub peak_speed: f64,
    pub accel: f64,
    /// Pause at the top of the stroke (s).
    pub hold: f64,
    pub period: f64,
    /// Time offset of the first stroke within the period (s).
    pub phase: f64,
}

impl Default for BurstScript {
    fn default() -> Self {
        Self {
            rest: [0.45, 0.0, 0.15],
            direction: [0.0, 0.0, 1.0],
            stroke: 0.30,
            peak_speed: 1.0,
            accel: 3.5,
            hold: 0.2,
            period: 3.0,
            phase: 0.5,
        }
    }
}

impl BurstScript {
    fn profile(&self) -> TrapezoidProfile {
        TrapezoidProfile::new(self.stroke, self.peak_speed, self.accel)
    }

    pub fn validate(&self) -> Result<()> {
        let dir = Vector3::from(self.direction);
        if !(self.stroke > 0.0 && self.peak_speed > 0.0 && self.accel > 0.0 && self.hold >= 0.0) || dir.norm() < 1e-9 {
            return Err(Error::Config("burst script needs positive stroke, speed, accel and a direction".into()));
        }
        if !(self.period >= 2.0 * self.profile().duration() + self.hold) {
            return Err(Error::Config("burst period shorter than one stroke cycle".into()));
        }
        Ok(())
    }
}

/// Hand position of the periodic up-stroke script at time `t`.
pub fn mockup_hand_position(t: f64, s: &BurstScript) -> Vector3<f64> {
    let prof = s.profile();
    let up = prof.duration();
    let local = (t - s.phase).rem_euclid(s.period);
    let offset = if local <= up {
        prof.position(local)
    } else if local <= up + s.hold {
        s.stroke
    } else {
        s.stroke - prof.position(local - up - s.hold)
    };
    Vector3::from(s.rest) + Vector3::from(s.direction).normalize() * offset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandScript {
    MockupBurst(BurstScript),
    /// Piecewise-linear through `[t, x, y, z]` rows.
    WaypointReplay {
        waypoints: Vec<[f64; 4]>,
        #[serde(default)]
        periodic: bool,
    },
    CsvReplay {
        path: PathBuf,
    },
    /// Positions arrive from an external client.
    Live,
}

impl Default for HandScript {
    fn default() -> Self {
        HandScript::MockupBurst(BurstScript::default())
    }
}

/// A hand script resolved into something that can be sampled.
#[derive(Debug, Clone, PartialEq)]
pub enum HandMotion {
    Burst(BurstScript),
    Samples { times: Vec<f64>, positions: Vec<Vector3<f64>>, periodic: bool },
}

impl HandMotion {
    pub fn from_script(script: &HandScript) -> Result<Self> {
        match script {
            HandScript::MockupBurst(b) => {
                b.validate()?;
                Ok(HandMotion::Burst(b.clone()))
            }
            HandScript::WaypointReplay { waypoints, periodic } => {
                let times: Vec<f64> = waypoints.iter().map(|w| w[0]).collect();
                let positions = waypoints.iter().map(|w| Vector3::new(w[1], w[2], w[3])).collect();
                Self::samples(times, positions, *periodic)
            }
            HandScript::CsvReplay { path } => {
                let rec = read_recording_csv(path)?;
                Self::samples(rec.times, rec.positions, false)
            }
            HandScript::Live => Err(Error::Config("live hand input needs the bridge service".into())),
        }
    }

    fn samples(times: Vec<f64>, positions: Vec<Vector3<f64>>, periodic: bool) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("hand samples need strictly increasing times".into()));
        }
        if periodic && times.len() < 2 {
            return Err(Error::Config("a periodic hand path needs at least two samples".into()));
        }
        Ok(HandMotion::Samples { times, positions, periodic })
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        match self {
            HandMotion::Burst(b) => mockup_hand_position(t, b),
            HandMotion::Samples { times, positions, periodic } => {
                let n = times.len();
                let t = if *periodic { times[0] + (t - times[0]).rem_euclid(times[n - 1] - times[0]) } else { t };
                if t <= times[0] {
                    return positions[0];
                }
                if t >= times[n - 1] {
                    return positions[n - 1];
                }
                let i = times.partition_point(|&x| x <= t);
                let (t0, t1) = (times[i - 1], times[i]);
                if t == t0 {
                    return positions[i - 1];
                }
                positions[i - 1] + (positions[i] - positions[i - 1]) * ((t - t0) / (t1 - t0))
            }
        }
    }
}

fn tool_down() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]
}

/// Cyclic waypoint path followed by the nominal controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotPath {
    pub waypoints: Vec<[f64; 3]>,
    /// Dwell time on arrival at each waypoint (s); missing entries mean 0.
    pub holds: Vec<f64>,
    /// TCP orientation held throughout, row-major.
    pub orientation: [[f64; 3]; 3],
    /// Carrot distance ahead of the TCP projection (m).
    pub lookahead: f64,
    /// Distance to a segment end at which the next segment starts (m).
    pub switch_tolerance: f64,
}

impl Default for RobotPath {
    fn default() -> Self {
        Self::sweep()
    }
}

impl RobotPath {
    /// Linear sweep above the hand's rest position.
    pub fn sweep() -> Self {
        Self {
            waypoints: vec![[0.45, -0.25, 0.45], [0.45, 0.25, 0.45]],
            holds: Vec::new(),
            orientation: tool_down(),
            lookahead: 0.15,
            switch_tolerance: 0.03,
        }
    }

    /// Pick, lift, give (with a hold), return.
    pub fn handover() -> Self {
        Self {
            waypoints: vec![[0.35, -0.30, 0.25], [0.35, -0.30, 0.45], [0.50, 0.10, 0.40], [0.35, -0.10, 0.45]],
            holds: vec![0.5, 0.0, 1.5, 0.0],
            orientation: tool_down(),
            lookahead: 0.15,
            switch_tolerance: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::Config("robot path needs at least two waypoints".into()));
        }
        let r = Matrix3::from_fn(|i, j| self.orientation[i][j]);
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("path orientation must be a rotation matrix".into()));
        }
        if !(self.lookahead > 0.0 && self.switch_tolerance > 0.0) || self.holds.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::Config("lookahead, switch tolerance and holds must be valid".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.orientation[i][j])
    }
}

/// Carrot-following proportional controller over a cyclic path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolicy {
    waypoints: Vec<Vector3<f64>>,
    holds: Vec<f64>,
    rotation: Matrix3<f64>,
    lookahead: f64,
    tolerance: f64,
    gains: GainConfig,
    segment: usize,
    hold_until: Option<f64>,
}

impl PathPolicy {
    pub fn new(path: &RobotPath, gains: &GainConfig) -> Self {
        Self {
            waypoints: path.waypoints.iter().map(|w| Vector3::from(*w)).collect(),
            holds: path.holds.clone(),
            rotation: path.rotation(),
            lookahead: path.lookahead,
            tolerance: path.switch_tolerance,
            gains: gains.clone(),
            segment: 0,
            hold_until: None,
        }
    }

    fn ends(&self) -> (Vector3<f64>, Vector3<f64>, usize) {
        let n = self.waypoints.len();
        let next = (self.segment + 1) % n;
        (self.waypoints[self.segment], self.waypoints[next], next)
    }

    /// Desired TCP position at the current state, advancing the segment
    /// index and hold timers as needed.
    pub fn carrot(&mut self, t: f64, p: &Vector3<f64>) -> Vector3<f64> {
        loop {
            let (a, b, next) = self.ends();
            if let Some(until) = self.hold_until {
                if t < until {
                    return b;
                }
                self.hold_until = None;
                self.segment = next;
                continue;
            }
            let seg = b - a;
            let len = seg.norm();
            let dir = seg / len;
            let s = (p - a).dot(&dir).clamp(0.0, len);
            if len - s <= self.tolerance {
                let hold = self.holds.get(next).copied().unwrap_or(0.0);
                if hold > 0.0 {
                    self.hold_until = Some(t + hold);
                    return b;
                }
                self.segment = next;
                continue;
            }
            return a + dir * (s + self.lookahead).min(len);
        }
    }
}

impl NominalPolicy for PathPolicy {
    fn command(&mut self, t: f64, _q: &JointVector, tcp: &Pose, jacobian: &Jacobian) -> JointVector {
        let target = Pose::new(self.carrot(t, &tcp.position), self.rotation);
        nominal_joint_velocity(&nominal_twist(tcp, &target, &self.gains), jacobian, &self.gains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterKind {
    /// Learned model; the checkpoint path is resolved by the caller.
    Trained {
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
    Linear,
    Kalman(#[serde(default)] KalmanConfig),
    Particle(#[serde(default)] ParticleConfig),
    /// The script's true future positions with negligible variance.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub safety: SafetyConfig,
    pub controller: GainConfig,
    pub robot: KinematicChain,
    /// IK seed used to find the starting configuration.
    pub initial_q_seed: [f64; 6],
    pub hand: HandScript,
    pub path: RobotPath,
    pub duration: f64,
    pub control_rate_hz: f64,
    pub forecaster: ForecasterKind,
    pub t_in: usize,
    /// Additive hand measurement noise per axis (m).
    pub measurement_noise: f64,
    /// Hand measurements lag the true hand by this many control steps.
    pub sensing_delay_steps: usize,
    /// Each seed shifts the burst phase by up to this much (s).
    pub phase_jitter: f64,
    pub seeds: Vec<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "mockup".into(),
            safety: SafetyConfig::default(),
            controller: GainConfig::default(),
            robot: KinematicChain::default(),
            initial_q_seed: [0.0, -1.2, 1.6, -1.97, -1.57, 0.0],
            hand: HandScript::default(),
            path: RobotPath::sweep(),
            duration: 60.0,
            control_rate_hz: 30.0,
            forecaster: ForecasterKind::Trained { checkpoint: None },
            t_in: 15,
            measurement_noise: 0.002,
            sensing_delay_steps: 0,
            phase_jitter: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ScenarioConfig {
    pub fn handover() -> Self {
        Self {
            name: "handover".into(),
            path: RobotPath::handover(),
            hand: HandScript::WaypointReplay {
                waypoints: vec![
                    [0.0, 0.60, 0.35, 0.20],
                    [1.5, 0.60, 0.35, 0.20],
                    [2.5, 0.52, 0.14, 0.34],
                    [4.5, 0.52, 0.14, 0.34],
                    [5.5, 0.60, 0.35, 0.20],
                    [7.0, 0.60, 0.35, 0.20],
                ],
                periodic: true,
            },
            ..Self::default()
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    pub fn steps(&self) -> usize {
        (self.duration * self.control_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.safety.validate()?;
        self.controller.validate()?;
        self.path.validate()?;
        KinematicChain::new(self.robot.links(), *self.robot.base())?;
        if !(self.duration > 0.0 && self.control_rate_hz > 0.0) {
            return Err(Error::Config("duration and control rate must be positive".into()));
        }
        if ((1.0 / self.control_rate_hz) - self.safety.dt).abs() > 1e-12 {
            return Err(Error::Config("control period must equal the forecast step safety.dt".into()));
        }
        if self.t_in < 2 || !(self.measurement_noise >= 0.0) || !(self.phase_jitter >= 0.0) {
            return Err(Error::Config("t_in ≥ 2 and nonnegative noise and jitter required".into()));
        }
        Ok(())
    }
}

/// One control step, as written to the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub q: [f64; 6],
    pub u_nom: [f64; 6],
    pub u_safe: [f64; 6],
    /// True hand centre.
    pub hand: [f64; 3],
    pub hand_measured: [f64; 3],
    pub tcp: [f64; 3],
    /// True separation and barrier value (`σ̄ = 0`).
    pub d: f64,
    pub h: f64,
    pub h_pred_min: f64,
    pub h_pred_max: f64,
    pub sigma_bar: Vec<f64>,
    pub delta_r: f64,
    pub delta_p: f64,
    pub lambda_p: f64,
    pub qp_iterations: usize,
    pub degraded: bool,
    pub stale_forecast: bool,
    pub method: Method,
    pub gamma: f64,
}

fn arr<const N: usize>(v: impl IntoIterator<Item = f64>) -> [f64; N] {
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(v) {
        *o = x;
    }
    out
}

/// True separation and barrier value between the hand and the TCP cylinder.
pub fn true_barrier(tcp: &Pose, hand: &Vector3<f64>, cfg: &SafetyConfig) -> (f64, f64) {
    let cyl = LinkCylinder::attached_to_tcp(tcp, cfg.h_cyl, cfg.r_cyl);
    let d = separation_from_point(hand, &cyl).distance;
    (d, cfg.d_min - d)
}

enum Source {
    Model(Box<dyn Forecaster + Send>),
    Oracle,
    None,
}

/// Stepwise closed-loop driver shared by batch runs and the live service.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub world: WorldState,
    filter: SafetyFilter,
    policy: PathPolicy,
    source: Source,
    last_forecast: Option<GaussianForecast>,
}

impl Simulation {
    /// `model` is required when the scenario asks for the trained forecaster.
    pub fn new(cfg: ScenarioConfig, model: Option<&NetParams>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let chain = cfg.robot.clone();
        let path = &cfg.path;
        let start = Pose::new(Vector3::from(path.waypoints[0]), path.rotation());
        let (q0, err) = inverse_kinematics(&chain, &JointVector::from(cfg.initial_q_seed), &start, 500);
        if err > 1e-6 {
            return Err(Error::Config(format!("first waypoint unreachable (IK error {err:.2e} m)")));
        }
        let source = match (&cfg.forecaster, cfg.safety.method) {
            (_, Method::Cbf) => Source::None,
            (ForecasterKind::Oracle, _) => Source::Oracle,
            (ForecasterKind::Trained { .. }, _) => {
                let params =
                    model.ok_or_else(|| Error::Config("trained forecaster selected but no model given".into()))?;
                if !params.is_consistent() {
                    return Err(Error::Config("model parameters are inconsistent".into()));
                }
                Source::Model(Box::new(NetForecaster { params: params.clone() }))
            }
            (ForecasterKind::Linear, _) => Source::Model(Box::new(LinearForecaster)),
            (ForecasterKind::Kalman(k), _) => Source::Model(Box::new(KalmanForecaster(k.clone()))),
            (ForecasterKind::Particle(p), _) => {
                let p = ParticleConfig { seed: p.seed ^ seed, ..p.clone() };
                Source::Model(Box::new(ParticleForecaster::new(p)))
            }
        };
        let filter = SafetyFilter::new(chain.clone(), cfg.safety.clone())?;
        let policy = PathPolicy::new(path, &cfg.controller);
        let world = WorldState::new(&chain, q0, 0.0, cfg.t_in.max(2));
        Ok(Self { cfg, world, filter, policy, source, last_forecast: None })
    }

    pub fn safety(&self) -> &SafetyConfig {
        &self.filter.cfg
    }

    /// Swap method and `γ` between steps. The forecaster is kept; switching
    /// into a predictive method without one is an error.
    pub fn set_method(&mut self, method: Method, gamma: f64, model: Option<&NetParams>) -> Result<()> {
        let mut cfg = self.filter.cfg.clone();
        cfg.method = method;
        cfg.gamma = gamma;
        cfg.validate()?;
        if method.is_predictive() && matches!(self.source, Source::None) {
            self.source = match model {
                Some(p) => Source::Model(Box::new(NetForecaster { params: p.clone() })),
                None => Source::Model(Box::new(LinearForecaster)),
            };
        }
        self.filter.cfg = cfg.clone();
        self.cfg.safety = cfg;
        Ok(())
    }

    pub fn last_forecast(&self) -> Option<&GaussianForecast> {
        self.last_forecast.as_ref()
    }

    /// Fill the history as if the hand had rested at `p` before `t = 0`.
    pub fn prime_history(&mut self, p: Vector3<f64>) {
        let dt = self.cfg.dt();
        for i in (1..self.cfg.t_in).rev() {
            self.world.push_hand(self.world.t - i as f64 * dt, p);
        }
    }

    /// Run one control step with the given hand measurement. `truth` is the
    /// true hand position (for the record) and `oracle` supplies the true
    /// future when the oracle forecaster is active.
    pub fn step_with(
        &mut self,
        measured: Vector3<f64>,
        truth: Vector3<f64>,
        oracle: Option<&dyn Fn(f64) -> Vector3<f64>>,
    ) -> Result<(TraceRecord, FilterResult)> {
        let dt = self.cfg.dt();
        let t = self.world.t;
        self.world.push_hand(t, measured);
        let horizon = self.filter.cfg.horizon;
        let forecast = if self.filter.cfg.method.is_predictive() {
            let f = match &mut self.source {
                Source::Oracle => {
                    let future =
                        oracle.ok_or_else(|| Error::Config("oracle forecaster needs a scripted hand".into()))?;
                    GaussianForecast::deterministic((1..=horizon).map(|k| future(t + k as f64 * dt)).collect(), dt)
                }
                Source::Model(m) => {
                    let w = self
                        .world
                        .window(self.cfg.t_in, dt)
                        .ok_or_else(|| Error::InvalidInput("hand history shorter than the forecast window".into()))?;
                    m.predict(&w, horizon)?
                }
                Source::None => return Err(Error::Config("predictive method without a forecaster".into())),
            };
            Some(f)
        } else {
            None
        };
        let result = self.filter.filter(t, &self.world.q, &self.policy, &measured, forecast.as_ref())?;
        // The rollout advanced a clone; advance the live policy identically.
        let (tcp, jac) = self.filter.chain.pose_and_jacobian(&self.world.q);
        let _ = self.policy.command(t, &self.world.q, &tcp, &jac);

        let (d, h) = true_barrier(&self.world.tcp, &truth, &self.filter.cfg);
        let (h_lo, h_hi) = result.h_range();
        let rec = TraceRecord {
            t,
            q: arr(self.world.q.iter().copied()),
            u_nom: arr(result.u_nom.iter().copied()),
            u_safe: arr(result.u_safe.iter().copied()),
            hand: arr(truth.iter().copied()),
            hand_measured: arr(measured.iter().copied()),
            tcp: arr(self.world.tcp.position.iter().copied()),
            d,
            h,
            h_pred_min: h_lo,
            h_pred_max: h_hi,
            sigma_bar: result.sigma_bar_profile(),
            delta_r: result.delta_r,
            delta_p: result.delta_p,
            lambda_p: result.lambda_p,
            qp_iterations: result.qp_iterations,
            degraded: result.degraded,
            stale_forecast: false,
            method: self.filter.cfg.method,
            gamma: self.filter.cfg.gamma,
        };
        self.last_forecast = forecast;
        step(&mut self.world, &self.filter.chain, &result.u_safe, dt);
        Ok((rec, result))
    }

    /// Step with zero velocity, keeping time and history consistent.
    pub fn hold(&mut self) {
        let dt = self.cfg.dt();
        step(&mut self.world, &self.filter.chain, &JointVector::zeros(), dt);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    /// Wall-clock seconds of forecast + rollout + QP for each step.
    pub step_seconds: Vec<f64>,
}

/// Run a scripted scenario for one seed.
pub fn run_scenario(cfg: &ScenarioConfig, model: Option<&NetParams>, seed: u64) -> Result<ScenarioRun> {
    let mut cfg = cfg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let HandScript::MockupBurst(b) = &mut cfg.hand {
        b.phase += rng.random::<f64>() * cfg.phase_jitter;
    }
    let motion = HandMotion::from_script(&cfg.hand)?;
    let noise = Normal::new(0.0, cfg.measurement_noise).map_err(|e| Error::Config(e.to_string()))?;
    // Oracle runs see the exact hand.
    let sd = if cfg.forecaster == ForecasterKind::Oracle { 0.0 } else { cfg.measurement_noise };
    let delay = cfg.sensing_delay_steps;
    let steps = cfg.steps();
    let dt = cfg.dt();
    let mut sim = Simulation::new(cfg, model, seed)?;
    sim.prime_history(motion.position(0.0));
    let oracle = |t: f64| motion.position(t);

    let mut records = Vec::with_capacity(steps);
    let mut step_seconds = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as f64 * dt;
        let truth = motion.position(t);
        let sensed = motion.position(t - delay as f64 * dt);
        let measured = if sd > 0.0 { sensed + Vector3::from_fn(|_, _| noise.sample(&mut rng)) } else { sensed };
        // Keep the simulation clock on the exact grid.
        sim.world.t = t;
        let start = Instant::now();
        let (rec, _) = sim.step_with(measured, truth, Some(&oracle))?;
        step_seconds.push(start.elapsed().as_secs_f64());
        records.push(rec);
    }
    Ok(ScenarioRun { seed, records, step_seconds })
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
