//! The control thread: the only owner of the simulation state.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hri_shield::forecast::NetParams;
use hri_shield::sim::{ForecasterKind, HandScript, ScenarioConfig, Simulation};
use hri_shield::{Error, Result};
use tokio::sync::broadcast;

use crate::mailbox::{ConfigCell, HandSample, Mailbox};
use crate::protocol::{LoopState, OutboundMsg, RibbonPoint, StateFrame, SCHEMA_VERSION};

/// State shared between connection tasks and the control thread.
#[derive(Debug)]
pub struct Shared {
    pub mailbox: Mailbox,
    pub config: ConfigCell,
    pub frames: broadcast::Sender<Arc<str>>,
    pub shutdown: AtomicBool,
}

impl Shared {
    pub fn new(frame_buffer: usize) -> Self {
        let (frames, _) = broadcast::channel(frame_buffer.max(1));
        Self { mailbox: Mailbox::default(), config: ConfigCell::default(), frames, shutdown: AtomicBool::new(false) }
    }
}

pub struct ControlLoop {
    sim: Simulation,
    model: Option<NetParams>,
    pause_after: Duration,
    last_hand: Option<HandSample>,
    primed: bool,
    step: u64,
    violation_count: u64,
    inside: bool,
    overrun: bool,
}

impl ControlLoop {
    /// `scenario` must use a live hand script and a non-oracle forecaster.
    pub fn new(scenario: ScenarioConfig, model: Option<NetParams>, pause_after: Duration) -> Result<Self> {
        if scenario.forecaster == ForecasterKind::Oracle {
            return Err(Error::Config("the oracle forecaster needs a scripted hand".into()));
        }
        if scenario.hand != HandScript::Live {
            return Err(Error::Config("the live service needs scenario.hand = live".into()));
        }
        let sim = Simulation::new(scenario, model.as_ref(), 0)?;
        Ok(Self {
            sim,
            model,
            pause_after,
            last_hand: None,
            primed: false,
            step: 0,
            violation_count: 0,
            inside: false,
            overrun: false,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// One control period: apply pending config, consume the newest hand
    /// sample, then either step the filter or hold the robot.
    pub fn tick(&mut self, now: Instant, shared: &Shared) -> StateFrame {
        if let Some(change) = shared.config.take() {
            let s = self.sim.safety();
            let (method, gamma) = (change.method.unwrap_or(s.method), change.gamma.unwrap_or(s.gamma));
            if let Err(e) = self.sim.set_method(method, gamma, self.model.as_ref()) {
                log::warn!("config change rejected: {e}");
            }
        }
        if let Some(s) = shared.mailbox.take() {
            if !self.primed {
                self.sim.prime_history(s.position);
                self.primed = true;
            }
            self.last_hand = Some(s);
        }
        let live = self.last_hand.filter(|s| now.duration_since(s.received) <= self.pause_after);
        let frame = match live {
            Some(s) => match self.sim.step_with(s.position, s.position, None) {
                Ok((rec, res)) => {
                    let threshold = self.sim.safety().violation_threshold;
                    let above = rec.h > threshold;
                    if above && !self.inside {
                        self.violation_count += 1;
                    }
                    self.inside = above;
                    let (h_min, _) = res.h_range();
                    let forecast = self
                        .sim
                        .last_forecast()
                        .map(|f| {
                            (0..f.horizon())
                                .map(|k| {
                                    let sd = f.std_dev(k) * 2.0;
                                    RibbonPoint { mu: f.mu[k].into(), two_sigma: sd.into() }
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    let mut frame = self.base_frame(LoopState::Running, rec.t);
                    frame.q = rec.q;
                    frame.tcp_position = rec.tcp;
                    frame.hand = Some(rec.hand);
                    frame.forecast = forecast;
                    frame.h = Some(rec.h);
                    frame.h_min = Some(h_min);
                    frame.sigma_bar_max = rec.sigma_bar.iter().copied().fold(0.0, f64::max);
                    frame.delta_r = rec.delta_r;
                    frame.delta_p = rec.delta_p;
                    frame.lambda_p = rec.lambda_p;
                    frame.degraded = rec.degraded;
                    frame
                }
                Err(e) => {
                    log::error!("control step failed: {e}; holding");
                    self.hold_frame()
                }
            },
            None => self.hold_frame(),
        };
        self.step += 1;
        frame
    }

    fn hold_frame(&mut self) -> StateFrame {
        let t = self.sim.world.t;
        self.sim.hold();
        self.inside = false;
        let mut f = self.base_frame(LoopState::Paused, t);
        f.hand = self.last_hand.map(|s| s.position.into());
        f
    }

    fn base_frame(&self, state: LoopState, t: f64) -> StateFrame {
        let w = &self.sim.world;
        let r = w.tcp.rotation;
        let s = self.sim.safety();
        StateFrame {
            schema_version: SCHEMA_VERSION,
            step: self.step,
            t,
            state,
            q: w.q.into(),
            tcp_position: w.tcp.position.into(),
            tcp_rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            hand: None,
            forecast: Vec::new(),
            h: None,
            h_min: None,
            sigma_bar_max: 0.0,
            delta_r: 0.0,
            delta_p: 0.0,
            lambda_p: s.lambda_r,
            violation_count: self.violation_count,
            method: s.method,
            gamma: s.gamma,
            degraded: false,
            overrun: self.overrun,
        }
    }
}

/// Run `ctl` at a fixed period until `shared.shutdown` is set. Deadlines
/// are absolute so jitter does not accumulate; after an overrun the
/// schedule skips ahead instead of bursting.
pub fn run(mut ctl: ControlLoop, shared: Arc<Shared>, period: Duration) {
    let start = Instant::now();
    let mut k: u32 = 0;
    while !shared.shutdown.load(Ordering::Relaxed) {
        let deadline = start + period * k;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
        let t0 = Instant::now();
        let frame = ctl.tick(t0, &shared);
        // No receivers is fine; viewers come and go.
        let _ = shared.frames.send(Arc::from(OutboundMsg::State(frame).to_json()));
        let elapsed = t0.elapsed();
        ctl.overrun = elapsed > period;
        if ctl.overrun {
            log::warn!(
                "control step took {:.1} ms (period {:.1} ms)",
                elapsed.as_secs_f64() * 1e3,
                period.as_secs_f64() * 1e3
            );
        }
        k += 1;
        let behind = Instant::now().duration_since(start).as_secs_f64() / period.as_secs_f64();
        if behind > f64::from(k) + 1.0 {
            k = behind.ceil() as u32;
        }
    }
}
