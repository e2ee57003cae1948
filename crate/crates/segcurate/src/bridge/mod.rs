//! Generator, labeller and depth workers.
//!
//! Real models run in external processes speaking the line protocol in
//! [`protocol`]; [`WorkerHandle`] drives one such process. [`mock`] holds
//! in-process backends with the same file-exchange behaviour, and [`serve`]
//! runs any backend as a protocol-speaking worker.

pub mod mock;
pub mod protocol;
pub mod serve;
pub mod worker;

use std::path::PathBuf;

pub use protocol::{Op, Request, Response, Role, PROTOCOL_VERSION};
pub use worker::{Timeouts, WorkerHandle};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("failed to spawn worker `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("worker `{command}` sent no handshake within {secs} s")]
    HandshakeTimeout { command: String, secs: u64 },
    #[error("expected a {expected} worker, `{command}` announced {found}")]
    RoleMismatch {
        command: String,
        expected: Role,
        found: Role,
    },
    #[error("worker speaks protocol v{found}, expected v{expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{op} request timed out after {secs} s")]
    Timeout { op: &'static str, secs: u64 },
    #[error("{role} worker exited")]
    WorkerDied { role: Role },
    #[error("worker error: {0}")]
    Worker(String),
    #[error("a {actual} worker cannot serve {op} requests")]
    WrongRole { op: &'static str, actual: Role },
    #[error("reference {0:?} escapes the working directory")]
    UnsafeRef(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl BridgeError {
    /// Failures worth retrying, possibly after restarting the worker.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BridgeError::Timeout { .. } | BridgeError::WorkerDied { .. } | BridgeError::Worker(_)
        )
    }

    /// Failures that mean the worker does not speak the protocol.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            BridgeError::HandshakeTimeout { .. }
                | BridgeError::RoleMismatch { .. }
                | BridgeError::VersionMismatch { .. }
                | BridgeError::Protocol(_)
                | BridgeError::UnsafeRef(_)
        )
    }
}

pub type BridgeResult<T> = Result<T, BridgeError>;

/// Produces candidate images for a label map.
pub trait Generator: Send {
    /// Writes `n` images under `out_prefix` and returns their references.
    fn generate(&mut self, label: &str, seed: u64, n: u32, out_prefix: &str) -> BridgeResult<Vec<String>>;

    /// Called before retrying a failed request.
    fn recover(&mut self) -> BridgeResult<()> {
        Ok(())
    }
}

/// Re-estimates a label map for an image.
pub trait Labeller: Send {
    /// Writes the label map to `out` and returns its reference.
    fn label(&mut self, image: &str, out: &str) -> BridgeResult<String>;

    fn recover(&mut self) -> BridgeResult<()> {
        Ok(())
    }
}

/// Estimates a depth map for an image.
pub trait DepthEstimator: Send {
    fn depth(&mut self, image: &str, out: &str) -> BridgeResult<String>;

    fn recover(&mut self) -> BridgeResult<()> {
        Ok(())
    }
}

impl<T: Generator + ?Sized> Generator for Box<T> {
    fn generate(&mut self, label: &str, seed: u64, n: u32, out_prefix: &str) -> BridgeResult<Vec<String>> {
        (**self).generate(label, seed, n, out_prefix)
    }

    fn recover(&mut self) -> BridgeResult<()> {
        (**self).recover()
    }
}

impl<T: Labeller + ?Sized> Labeller for Box<T> {
    fn label(&mut self, image: &str, out: &str) -> BridgeResult<String> {
        (**self).label(image, out)
    }

    fn recover(&mut self) -> BridgeResult<()> {
        (**self).recover()
    }
}
