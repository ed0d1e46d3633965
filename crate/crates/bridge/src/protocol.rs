//! JSON message schema. Every outbound frame carries `schema_version`.

use hri_shield::barrier::Method;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InboundMsg {
    /// Hand centre in the robot base frame (m); `t` is the client clock (s).
    HandPose { t: f64, x: f64, y: f64, z: f64 },
    /// Partial safety update applied at the next control step.
    SetConfig {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        method: Option<Method>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
}

/// Mean and 2σ band of one forecast step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibbonPoint {
    pub mu: [f64; 3],
    pub two_sigma: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopState {
    /// Waiting for, or timed out on, driver input; the robot is held.
    Paused,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub schema_version: u32,
    pub step: u64,
    /// Control-loop clock (s).
    pub t: f64,
    pub state: LoopState,
    pub q: [f64; 6],
    pub tcp_position: [f64; 3],
    /// Row-major TCP rotation.
    pub tcp_rotation: [[f64; 3]; 3],
    pub hand: Option<[f64; 3]>,
    /// Empty for CBF and while paused.
    pub forecast: Vec<RibbonPoint>,
    /// Barrier value now and its minimum over the predicted horizon.
    pub h: Option<f64>,
    pub h_min: Option<f64>,
    pub sigma_bar_max: f64,
    pub delta_r: f64,
    pub delta_p: f64,
    pub lambda_p: f64,
    pub violation_count: u64,
    pub method: Method,
    pub gamma: f64,
    pub degraded: bool,
    /// The previous step overran the control period.
    pub overrun: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedMessage,
    DriverSlotTaken,
    NotDriver,
    NonMonotonicTimestamp,
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub schema_version: u32,
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorFrame {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { schema_version: SCHEMA_VERSION, code, message: message.into() }
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutboundMsg {
    State(StateFrame),
    Error(ErrorFrame),
}

impl OutboundMsg {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages always serialize")
    }
}
