use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use hri_bridge::protocol::{ErrorCode, LoopState, OutboundMsg, StateFrame};
use hri_bridge::{start, ServeConfig};
use hri_shield::barrier::Method;
use hri_shield::sim::{ForecasterKind, ScenarioConfig};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn config() -> ServeConfig {
    ServeConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        scenario: ScenarioConfig { forecaster: ForecasterKind::Linear, ..Default::default() },
        ..Default::default()
    }
}

async fn connect(addr: std::net::SocketAddr, role: &str) -> Ws {
    connect_async(format!("ws://{addr}/ws?role={role}")).await.unwrap().0
}

async fn next_msg(ws: &mut Ws) -> OutboundMsg {
    loop {
        let msg =
            tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame within 5 s").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn next_state(ws: &mut Ws) -> StateFrame {
    loop {
        if let OutboundMsg::State(f) = next_msg(ws).await {
            return f;
        }
    }
}

async fn next_error(ws: &mut Ws) -> ErrorCode {
    loop {
        if let OutboundMsg::Error(e) = next_msg(ws).await {
            return e.code;
        }
    }
}

async fn send_json(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.to_owned().into())).await.unwrap();
}

async fn send_pose(ws: &mut Ws, t: f64, p: [f64; 3]) {
    send_json(ws, &format!(r#"{{"kind":"hand_pose","t":{t},"x":{},"y":{},"z":{}}}"#, p[0], p[1], p[2])).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn driver_session_end_to_end() {
    let server = start(config()).await.unwrap();
    let mut driver = connect(server.addr, "driver").await;
    let mut viewer = connect(server.addr, "viewer").await;

    let first = next_state(&mut viewer).await;
    assert_eq!(first.schema_version, 1);
    assert_eq!(first.state, LoopState::Paused);

    // A second driver is told the slot is taken and demoted to viewer.
    let mut second = connect(server.addr, "driver").await;
    assert_eq!(next_error(&mut second).await, ErrorCode::DriverSlotTaken);
    send_pose(&mut second, 0.0, [0.3, 0.0, 0.3]).await;
    assert_eq!(next_error(&mut second).await, ErrorCode::NotDriver);

    // Malformed input gets an error frame and the connection stays usable.
    send_json(&mut driver, "{not json").await;
    assert_eq!(next_error(&mut driver).await, ErrorCode::MalformedMessage);
    send_json(&mut driver, r#"{"kind":"set_config","gamma":500}"#).await;
    assert_eq!(next_error(&mut driver).await, ErrorCode::InvalidConfig);

    // Stream poses; frames switch to running with a forecast ribbon.
    let tcp = first.tcp_position;
    let hand = [tcp[0], tcp[1], tcp[2] - 0.13];
    let mut t = 0.0;
    let running = loop {
        send_pose(&mut driver, t, hand).await;
        t += 1.0 / 30.0;
        let f = next_state(&mut viewer).await;
        if f.state == LoopState::Running {
            break f;
        }
    };
    assert_eq!(running.forecast.len(), 30);
    assert!(running.h.is_some());

    send_pose(&mut driver, t - 1.0, hand).await;
    assert_eq!(next_error(&mut driver).await, ErrorCode::NonMonotonicTimestamp);

    // Config change lands on the next frames.
    send_json(&mut driver, r#"{"kind":"set_config","method":"PCBF","gamma":2.5}"#).await;
    let mut seen = false;
    for _ in 0..30 {
        send_pose(&mut driver, t, hand).await;
        t += 1.0 / 30.0;
        let f = next_state(&mut viewer).await;
        if f.method == Method::Pcbf {
            assert_eq!(f.gamma, 2.5);
            assert_eq!(f.lambda_p, 100.0);
            seen = true;
            break;
        }
    }
    assert!(seen, "config change never applied");

    // Silence for more than a second pauses the loop and freezes the robot.
    tokio::time::sleep(Duration::from_millis(1300)).await;
    let a = loop {
        let f = next_state(&mut viewer).await;
        if f.state == LoopState::Paused {
            break f;
        }
    };
    let b = next_state(&mut viewer).await;
    assert_eq!(b.state, LoopState::Paused);
    assert_eq!(a.q, b.q);
    assert!(b.t > a.t);

    // Once the driver leaves, the slot can be claimed again.
    driver.close(None).await.unwrap();
    drop(driver);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let mut again = connect(server.addr, "driver").await;
    send_pose(&mut again, 100.0, hand).await;
    let f = loop {
        let f = next_state(&mut again).await;
        if f.state == LoopState::Running {
            break f;
        }
    };
    assert_eq!(f.method, Method::Pcbf);

    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unread_viewer_does_not_slow_others() {
    let cfg = ServeConfig { frame_buffer: 2, ..config() };
    let server = start(cfg).await.unwrap();
    let _idle = connect(server.addr, "viewer").await;
    let mut fast = connect(server.addr, "viewer").await;
    let first = next_state(&mut fast).await.step;
    let t0 = std::time::Instant::now();
    let mut last = first;
    while last < first + 30 {
        last = next_state(&mut fast).await.step;
    }
    assert!(t0.elapsed() < Duration::from_millis(1300), "30 frames took {:?}", t0.elapsed());
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn period_jitter_is_small() {
    let server = start(config()).await.unwrap();
    let mut viewer = connect(server.addr, "viewer").await;
    next_state(&mut viewer).await;
    let mut stamps = Vec::new();
    for _ in 0..60 {
        next_state(&mut viewer).await;
        stamps.push(std::time::Instant::now());
    }
    let dt = 1.0 / 30.0;
    let mean = stamps.last().unwrap().duration_since(stamps[0]).as_secs_f64() / (stamps.len() - 1) as f64;
    assert!((mean - dt).abs() < 0.2 * dt, "mean period {mean}");
    server.shutdown().await.unwrap();
}
