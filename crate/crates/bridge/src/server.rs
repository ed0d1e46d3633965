//! axum WebSocket front end.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use hri_shield::barrier::SafetyConfig;
use hri_shield::forecast::NetParams;
use hri_shield::sim::{HandScript, ScenarioConfig};
use nalgebra::Vector3;
use serde::Deserialize;
use tokio::sync::{broadcast, oneshot};

use crate::control::{self, ControlLoop, Shared};
use crate::mailbox::{ConfigChange, HandSample};
use crate::protocol::{ErrorCode, ErrorFrame, InboundMsg, OutboundMsg};
use crate::BridgeError;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub rate_hz: f64,
    /// Robot, controller, safety and forecaster settings; the hand script
    /// is replaced by live input.
    pub scenario: ScenarioConfig,
    pub model: Option<NetParams>,
    /// Without driver input for this long the loop pauses.
    pub pause_after: Duration,
    /// Frames a viewer may fall behind before it is dropped.
    pub frame_buffer: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8765)),
            rate_hz: 30.0,
            scenario: ScenarioConfig::default(),
            model: None,
            pause_after: Duration::from_secs(1),
            frame_buffer: 64,
        }
    }
}

#[derive(Clone)]
struct AppState {
    shared: Arc<Shared>,
    driver_taken: Arc<AtomicBool>,
    safety: SafetyConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Driver,
    #[default]
    Viewer,
}

#[derive(Debug, Deserialize)]
struct WsQuery {
    #[serde(default)]
    role: Role,
}

/// A started service; dropping it without [`RunningServer::shutdown`]
/// leaves the threads running.
pub struct RunningServer {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    stop_http: oneshot::Sender<()>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    control: std::thread::JoinHandle<()>,
}

impl RunningServer {
    pub async fn shutdown(self) -> Result<(), BridgeError> {
        self.shared.shutdown.store(true, Ordering::Relaxed);
        let _ = self.stop_http.send(());
        self.http.await.map_err(|e| std::io::Error::other(e.to_string()))??;
        tokio::task::spawn_blocking(move || self.control.join())
            .await
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .map_err(|_| std::io::Error::other("control thread panicked"))?;
        Ok(())
    }
}

/// Bind, start the control thread and begin accepting connections.
pub async fn start(cfg: ServeConfig) -> Result<RunningServer, BridgeError> {
    if !(cfg.rate_hz > 0.0 && cfg.rate_hz.is_finite()) {
        return Err(hri_shield::Error::Config("rate_hz must be positive".into()).into());
    }
    let mut scenario = cfg.scenario.clone();
    scenario.hand = HandScript::Live;
    scenario.control_rate_hz = cfg.rate_hz;
    scenario.safety.dt = 1.0 / cfg.rate_hz;
    if (cfg.rate_hz - 30.0).abs() > 1e-9 {
        log::warn!("control rate {} Hz differs from the 30 Hz forecast sampling", cfg.rate_hz);
    }
    let ctl = ControlLoop::new(scenario.clone(), cfg.model.clone(), cfg.pause_after)?;
    let shared = Arc::new(Shared::new(cfg.frame_buffer));

    let listener =
        tokio::net::TcpListener::bind(cfg.addr).await.map_err(|source| BridgeError::Bind { addr: cfg.addr, source })?;
    let addr = listener.local_addr()?;

    let period = Duration::from_secs_f64(1.0 / cfg.rate_hz);
    let loop_shared = shared.clone();
    let control = std::thread::Builder::new()
        .name("control-loop".into())
        .spawn(move || control::run(ctl, loop_shared, period))?;

    let state =
        AppState { shared: shared.clone(), driver_taken: Arc::new(AtomicBool::new(false)), safety: scenario.safety };
    let app = Router::new().route("/ws", get(ws_handler)).with_state(state);
    let (stop_http, stopped) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    log::info!("serving on ws://{addr}/ws");
    Ok(RunningServer { addr, shared, stop_http, http, control })
}

/// Run until Ctrl-C.
pub async fn serve(cfg: ServeConfig) -> Result<(), BridgeError> {
    let server = start(cfg).await?;
    tokio::signal::ctrl_c().await?;
    log::info!("shutting down");
    server.shutdown().await
}

async fn ws_handler(ws: WebSocketUpgrade, Query(q): Query<WsQuery>, State(app): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, q.role, app))
}

async fn send(socket: &mut WebSocket, msg: &OutboundMsg) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

fn error(code: ErrorCode, message: impl Into<String>) -> OutboundMsg {
    OutboundMsg::Error(ErrorFrame::new(code, message))
}

async fn connection(mut socket: WebSocket, role: Role, app: AppState) {
    let mut frames = app.shared.frames.subscribe();
    let is_driver = matches!(role, Role::Driver)
        && app.driver_taken.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_ok();
    if matches!(role, Role::Driver)
        && !is_driver
        && !send(&mut socket, &error(ErrorCode::DriverSlotTaken, "another driver is connected; viewing only")).await
    {
        return;
    }
    let mut last_t = f64::NEG_INFINITY;
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::info!("dropping a viewer {n} frames behind");
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Some(reply) = handle_inbound(text.as_str(), is_driver, &mut last_t, &app) {
                        if !send(&mut socket, &reply).await {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    if !send(&mut socket, &error(ErrorCode::MalformedMessage, "binary frames are not supported")).await {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    if is_driver {
        app.driver_taken.store(false, Ordering::Release);
    }
}

/// Apply one inbound message; returns an error frame to send back, if any.
fn handle_inbound(text: &str, is_driver: bool, last_t: &mut f64, app: &AppState) -> Option<OutboundMsg> {
    let msg = match serde_json::from_str::<InboundMsg>(text) {
        Ok(m) => m,
        Err(e) => return Some(error(ErrorCode::MalformedMessage, e.to_string())),
    };
    if !is_driver {
        return Some(error(ErrorCode::NotDriver, "only the driver connection may send commands"));
    }
    match msg {
        InboundMsg::HandPose { t, x, y, z } => {
            let p = Vector3::new(x, y, z);
            if !(t.is_finite() && p.iter().all(|v| v.is_finite())) {
                return Some(error(ErrorCode::MalformedMessage, "hand pose must be finite"));
            }
            if t < *last_t {
                return Some(error(ErrorCode::NonMonotonicTimestamp, format!("t = {t} after {last_t}")));
            }
            *last_t = t;
            app.shared.mailbox.put(HandSample { client_t: t, position: p, received: Instant::now() });
            None
        }
        InboundMsg::SetConfig { method, gamma } => {
            if let Some(g) = gamma {
                if !(g >= 0.0 && g < app.safety.lambda_r) {
                    return Some(error(
                        ErrorCode::InvalidConfig,
                        format!("gamma must lie in [0, {}), got {g}", app.safety.lambda_r),
                    ));
                }
            }
            app.shared.config.merge(ConfigChange { method, gamma });
            None
        }
    }
}
