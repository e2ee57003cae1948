//! Worker-side request loop.

use std::io::{self, BufRead, Write};

use super::protocol::{Handshake, Op, Request, Response, Role, PROTOCOL_VERSION};
use super::{DepthEstimator, Generator, Labeller};

pub enum Backend {
    Generator(Box<dyn Generator>),
    Labeller(Box<dyn Labeller>),
    Depth(Box<dyn DepthEstimator>),
}

impl Backend {
    pub fn role(&self) -> Role {
        match self {
            Backend::Generator(_) => Role::Generator,
            Backend::Labeller(_) => Role::Labeller,
            Backend::Depth(_) => Role::Depth,
        }
    }
}

/// Fault injection, used to exercise the client's failure handling.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Announce this role instead of the backend's.
    pub announce: Option<Role>,
    /// Exit without answering once this many requests have been received.
    pub crash_after: Option<u64>,
    /// Read requests but never answer them.
    pub stall: bool,
    /// Emit a non-JSON line before every answer.
    pub garbage: bool,
}

fn write_line<W: Write, T: serde::Serialize>(out: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn dispatch(backend: &mut Backend, id: u64, op: Op) -> Response {
    let result = match (backend, op) {
        (Backend::Generator(g), Op::Generate { label, seed, n, out_prefix }) => g
            .generate(&label, seed, n, &out_prefix)
            .map(|images| Response { images: Some(images), ..Response::ok(id) }),
        (Backend::Labeller(l), Op::Label { image, out }) => l
            .label(&image, &out)
            .map(|label| Response { label: Some(label), ..Response::ok(id) }),
        (Backend::Depth(d), Op::Depth { image, out }) => d
            .depth(&image, &out)
            .map(|depth| Response { depth: Some(depth), ..Response::ok(id) }),
        (b, op) => {
            return Response::error(
                Some(id),
                format!("a {} worker cannot serve {} requests", b.role(), op.name()),
            )
        }
    };
    result.unwrap_or_else(|e| Response::error(Some(id), e.to_string()))
}

/// Answers protocol v1 requests from `input` until `quit` or end of input.
/// Malformed lines get an error response rather than ending the loop.
pub fn serve<R: BufRead, W: Write>(
    mut backend: Backend,
    input: R,
    mut output: W,
    faults: &Faults,
) -> io::Result<()> {
    write_line(
        &mut output,
        &Handshake {
            v: PROTOCOL_VERSION,
            role: faults.announce.unwrap_or_else(|| backend.role()),
        },
    )?;
    let mut received = 0u64;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        received += 1;
        if faults.crash_after.is_some_and(|n| received > n) {
            std::process::exit(70);
        }
        if faults.stall {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()));
                write_line(&mut output, &Response::error(id, format!("malformed request: {e}")))?;
                continue;
            }
        };
        if request.v != PROTOCOL_VERSION {
            write_line(
                &mut output,
                &Response::error(Some(request.id), format!("unsupported protocol version {}", request.v)),
            )?;
            continue;
        }
        if request.op == Op::Quit {
            return Ok(());
        }
        if faults.garbage {
            output.write_all(b"this is not json\n")?;
        }
        let response = dispatch(&mut backend, request.id, request.op);
        write_line(&mut output, &response)?;
    }
    Ok(())
}
