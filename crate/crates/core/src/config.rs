//! Top-level JSON configuration shared by the CLI and the live service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::SafetyConfig;
use crate::controller::GainConfig;
use crate::error::{Error, Result};
use crate::forecast::synth::SynthConfig;
use crate::forecast::TrainConfig;
use crate::harness::{MetricsConfig, SweepCell, SweepGrid};
use crate::kinematics::KinematicChain;
use crate::sim::{ForecasterKind, HandScript, RobotPath, ScenarioConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    /// Overrides `safety.use_paper_half_exp` when set.
    pub use_paper_half_exp: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Overrides `safety.open_loop_rollout` when set.
    pub open_loop: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub initial_q_seed: [f64; 6],
    pub hand: HandScript,
    pub path: RobotPath,
    pub duration: f64,
    pub control_rate_hz: f64,
    pub forecaster: ForecasterKind,
    pub t_in: usize,
    pub measurement_noise: f64,
    pub sensing_delay_steps: usize,
    pub phase_jitter: f64,
    pub seeds: Vec<u64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self {
            name: s.name,
            initial_q_seed: s.initial_q_seed,
            hand: s.hand,
            path: s.path,
            duration: s.duration,
            control_rate_hz: s.control_rate_hz,
            forecaster: s.forecaster,
            t_in: s.t_in,
            measurement_noise: s.measurement_noise,
            sensing_delay_steps: s.sensing_delay_steps,
            phase_jitter: s.phase_jitter,
            seeds: s.seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub cells: Vec<SweepCell>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { cells: SweepGrid::default().cells }
    }
}

/// Every section is optional; missing keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub robot: KinematicChain,
    pub controller: GainConfig,
    pub safety: SafetyConfig,
    pub uncertainty: UncertaintySection,
    pub rollout: RolloutSection,
    pub metrics: MetricsConfig,
    pub scenario: ScenarioSection,
    pub training: TrainConfig,
    pub synth: SynthConfig,
    pub sweep: SweepSection,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Safety parameters with the `uncertainty` and `rollout` overrides applied.
    pub fn resolved_safety(&self) -> SafetyConfig {
        let mut s = self.safety.clone();
        if let Some(v) = self.uncertainty.use_paper_half_exp {
            s.use_paper_half_exp = v;
        }
        if let Some(v) = self.rollout.open_loop {
            s.open_loop_rollout = v;
        }
        s
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            name: s.name.clone(),
            safety: self.resolved_safety(),
            controller: self.controller.clone(),
            robot: self.robot.clone(),
            initial_q_seed: s.initial_q_seed,
            hand: s.hand.clone(),
            path: s.path.clone(),
            duration: s.duration,
            control_rate_hz: s.control_rate_hz,
            forecaster: s.forecaster.clone(),
            t_in: s.t_in,
            measurement_noise: s.measurement_noise,
            sensing_delay_steps: s.sensing_delay_steps,
            phase_jitter: s.phase_jitter,
            seeds: s.seeds.clone(),
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        SweepGrid { scenario: self.scenario_config(), cells: self.sweep.cells.clone(), metrics: self.metrics.clone() }
    }

    /// Checkpoint named by a trained-forecaster scenario, if any.
    pub fn checkpoint(&self) -> Option<&PathBuf> {
        match &self.scenario.forecaster {
            ForecasterKind::Trained { checkpoint } => checkpoint.as_ref(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_config().validate()?;
        self.training.validate()?;
        self.synth.validate()?;
        if !(self.metrics.threshold >= 0.0) {
            return Err(Error::Config("metrics.threshold must be nonnegative".into()));
        }
        Ok(())
    }
}
