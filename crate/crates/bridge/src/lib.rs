//! Live teleoperation service.
//!
//! A client streams hand positions over a WebSocket; a dedicated control
//! thread runs the safety-filtered loop at a fixed rate and broadcasts one
//! [`protocol::StateFrame`] per step to every connected client.

pub mod control;
pub mod mailbox;
pub mod protocol;
pub mod server;

pub use server::{serve, start, RunningServer, ServeConfig};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error(transparent)]
    Core(#[from] hri_shield::Error),

    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("server failed: {0}")]
    Server(#[from] std::io::Error),
}
