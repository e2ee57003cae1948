use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::protocol::{Handshake, Op, Request, Response, Role, PROTOCOL_VERSION};
use super::{BridgeError, BridgeResult, DepthEstimator, Generator, Labeller};
use crate::manifest::is_safe_relative;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub handshake_secs: f64,
    pub generate_secs: f64,
    pub label_secs: f64,
    pub depth_secs: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            handshake_secs: 30.0,
            generate_secs: 600.0,
            label_secs: 120.0,
            depth_secs: 120.0,
        }
    }
}

impl Timeouts {
    fn for_op(&self, op: &Op) -> Duration {
        let secs = match op {
            Op::Generate { .. } => self.generate_secs,
            Op::Label { .. } => self.label_secs,
            Op::Depth { .. } => self.depth_secs,
            Op::Quit => self.handshake_secs,
        };
        Duration::from_secs_f64(secs)
    }
}

/// One live worker process. Requests are sent one at a time; responses are
/// matched by id and stale answers to earlier, timed-out requests are dropped.
pub struct WorkerHandle {
    role: Role,
    command: Vec<String>,
    workdir: PathBuf,
    timeouts: Timeouts,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    healthy: bool,
}

impl std::fmt::Debug for WorkerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerHandle")
            .field("role", &self.role)
            .field("command", &self.command)
            .field("workdir", &self.workdir)
            .field("next_id", &self.next_id)
            .finish()
    }
}

fn command_line(command: &[String]) -> String {
    command.join(" ")
}

impl WorkerHandle {
    /// Starts `command` in `workdir` and waits for its handshake.
    pub fn spawn(role: Role, command: &[String], workdir: &Path, timeouts: Timeouts) -> BridgeResult<Self> {
        let (program, args) = command.split_first().ok_or_else(|| BridgeError::Spawn {
            command: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .current_dir(workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: command_line(command),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name(format!("{role}-reader"))
            .spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let stop = line.is_err();
                    if tx.send(line).is_err() || stop {
                        break;
                    }
                }
            })
            .expect("spawn reader thread");

        let mut handle = Self {
            role,
            command: command.to_vec(),
            workdir: workdir.to_path_buf(),
            timeouts,
            child,
            stdin,
            lines: rx,
            next_id: 1,
            healthy: true,
        };
        handle.handshake()?;
        Ok(handle)
    }

    fn handshake(&mut self) -> BridgeResult<()> {
        let limit = Duration::from_secs_f64(self.timeouts.handshake_secs);
        let line = match self.lines.recv_timeout(limit) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(BridgeError::Protocol(format!("reading handshake: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                return Err(BridgeError::HandshakeTimeout {
                    command: command_line(&self.command),
                    secs: limit.as_secs(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(BridgeError::WorkerDied { role: self.role });
            }
        };
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| BridgeError::Protocol(format!("bad handshake {line:?}: {e}")))?;
        if hs.v != PROTOCOL_VERSION {
            self.kill();
            return Err(BridgeError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: hs.v,
            });
        }
        if hs.role != self.role {
            self.kill();
            return Err(BridgeError::RoleMismatch {
                command: command_line(&self.command),
                expected: self.role,
                found: hs.role,
            });
        }
        debug!("{} worker ready: {}", self.role, command_line(&self.command));
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    /// Id the next request will carry.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn is_alive(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.healthy = false;
    }

    /// Sends one request and waits for the response with the same id.
    pub fn request(&mut self, op: Op) -> BridgeResult<Response> {
        let id = self.next_id;
        self.next_id += 1;
        let name = op.name();
        let limit = self.timeouts.for_op(&op);
        let line = serde_json::to_string(&Request {
            v: PROTOCOL_VERSION,
            id,
            op,
        })
        .expect("request serializes");
        if writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()).is_err() {
            self.healthy = false;
            return Err(BridgeError::WorkerDied { role: self.role });
        }

        let deadline = Instant::now() + limit;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => {
                    self.healthy = false;
                    return Err(BridgeError::Protocol(format!("reading response: {e}")));
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.healthy = false;
                    return Err(BridgeError::Timeout {
                        op: name,
                        secs: limit.as_secs(),
                    });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.healthy = false;
                    return Err(BridgeError::WorkerDied { role: self.role });
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response = serde_json::from_str(&line).map_err(|e| {
                self.healthy = false;
                BridgeError::Protocol(format!("malformed response line {line:?}: {e}"))
            })?;
            match resp.id {
                Some(rid) if rid == id => {
                    if resp.ok {
                        return Ok(resp);
                    }
                    return Err(BridgeError::Worker(
                        resp.error.unwrap_or_else(|| "unspecified error".into()),
                    ));
                }
                Some(rid) if rid < id => {
                    warn!("dropping stale response {rid} while waiting for {id}");
                }
                Some(rid) => {
                    return Err(BridgeError::Protocol(format!(
                        "response id {rid} for request {id} was never sent"
                    )));
                }
                None => {
                    return Err(BridgeError::Worker(
                        resp.error.unwrap_or_else(|| "protocol error".into()),
                    ));
                }
            }
        }
    }

    fn check_ref(&self, reference: &str) -> BridgeResult<String> {
        if !is_safe_relative(reference) {
            return Err(BridgeError::UnsafeRef(reference.to_string()));
        }
        Ok(reference.to_string())
    }

    fn expect_role(&self, op: &'static str, role: Role) -> BridgeResult<()> {
        if self.role != role {
            return Err(BridgeError::WrongRole { op, actual: self.role });
        }
        Ok(())
    }

    /// Restarts the process when it died or stopped answering.
    pub fn restart_if_needed(&mut self) -> BridgeResult<()> {
        if self.healthy && self.is_alive() {
            return Ok(());
        }
        warn!("restarting {} worker", self.role);
        self.kill();
        let fresh = WorkerHandle::spawn(self.role, &self.command, &self.workdir, self.timeouts)?;
        let old = std::mem::replace(self, fresh);
        drop(old);
        Ok(())
    }

    /// Sends `quit` and waits for the process to exit.
    pub fn shutdown(mut self) -> BridgeResult<std::process::ExitStatus> {
        let _ = self.request_quit();
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => {
                    self.healthy = false;
                    return Ok(status);
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => {
                    self.kill();
                    return Err(BridgeError::Protocol("worker ignored quit".into()));
                }
            }
        }
    }

    fn request_quit(&mut self) -> std::io::Result<()> {
        let line = serde_json::to_string(&Request {
            v: PROTOCOL_VERSION,
            id: self.next_id,
            op: Op::Quit,
        })
        .expect("request serializes");
        self.next_id += 1;
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.request_quit();
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

impl Generator for WorkerHandle {
    fn generate(&mut self, label: &str, seed: u64, n: u32, out_prefix: &str) -> BridgeResult<Vec<String>> {
        self.expect_role("generate", Role::Generator)?;
        let resp = self.request(Op::Generate {
            label: label.to_string(),
            seed,
            n,
            out_prefix: out_prefix.to_string(),
        })?;
        let images = resp
            .images
            .ok_or_else(|| BridgeError::Protocol("generate response without images".into()))?;
        if images.len() != n as usize {
            return Err(BridgeError::Protocol(format!(
                "asked for {n} images, got {}",
                images.len()
            )));
        }
        images.iter().map(|r| self.check_ref(r)).collect()
    }

    fn recover(&mut self) -> BridgeResult<()> {
        self.restart_if_needed()
    }
}

impl Labeller for WorkerHandle {
    fn label(&mut self, image: &str, out: &str) -> BridgeResult<String> {
        self.expect_role("label", Role::Labeller)?;
        let resp = self.request(Op::Label {
            image: image.to_string(),
            out: out.to_string(),
        })?;
        let label = resp
            .label
            .ok_or_else(|| BridgeError::Protocol("label response without label".into()))?;
        self.check_ref(&label)
    }

    fn recover(&mut self) -> BridgeResult<()> {
        self.restart_if_needed()
    }
}

impl DepthEstimator for WorkerHandle {
    fn depth(&mut self, image: &str, out: &str) -> BridgeResult<String> {
        self.expect_role("depth", Role::Depth)?;
        let resp = self.request(Op::Depth {
            image: image.to_string(),
            out: out.to_string(),
        })?;
        let depth = resp
            .depth
            .or(resp.label)
            .ok_or_else(|| BridgeError::Protocol("depth response without a reference".into()))?;
        self.check_ref(&depth)
    }

    fn recover(&mut self) -> BridgeResult<()> {
        self.restart_if_needed()
    }
}
