//! Wire protocol v1: one JSON object per line over the worker's stdin/stdout.
//!
//! ```text
//! <- {"v":1,"role":"generator"}                                    handshake
//! -> {"v":1,"id":1,"op":"generate","label":"a.png","seed":7,"n":2,"out_prefix":"img/a"}
//! <- {"v":1,"id":1,"ok":true,"images":["img/a_0.png","img/a_1.png"]}
//! -> {"v":1,"id":2,"op":"label","image":"img/a_0.png","out":"lbl/a_0.png"}
//! <- {"v":1,"id":2,"ok":false,"error":"..."}
//! -> {"v":1,"id":3,"op":"quit"}
//! ```
//!
//! All file references are relative to the shared working directory.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Labeller,
    Depth,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Labeller => "labeller",
            Role::Depth => "depth",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generator" => Ok(Role::Generator),
            "labeller" | "labeler" => Ok(Role::Labeller),
            "depth" => Ok(Role::Depth),
            other => Err(format!("unknown worker role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub v: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    Generate {
        label: String,
        seed: u64,
        n: u32,
        out_prefix: String,
    },
    Label {
        image: String,
        out: String,
    },
    Depth {
        image: String,
        out: String,
    },
    Quit,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Generate { .. } => "generate",
            Op::Label { .. } => "label",
            Op::Depth { .. } => "depth",
            Op::Quit => "quit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    /// Absent only on protocol-error lines answering an unparseable request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok(id: u64) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: Some(id),
            ok: true,
            ..Self::default()
        }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            ok: false,
            error: Some(message.into()),
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let r = Request {
            v: 1,
            id: 4,
            op: Op::Generate {
                label: "s/a.png".into(),
                seed: 9,
                n: 2,
                out_prefix: "img/a".into(),
            },
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"v":1,"id":4,"op":"generate","label":"s/a.png","seed":9,"n":2,"out_prefix":"img/a"}"#
        );
        let q = Request { v: 1, id: 5, op: Op::Quit };
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"{"v":1,"id":5,"op":"quit"}"#);
        let back: Request = serde_json::from_str(r#"{"v":1,"id":2,"op":"label","image":"i.png","out":"o.png"}"#).unwrap();
        assert_eq!(back.op, Op::Label { image: "i.png".into(), out: "o.png".into() });
    }

    #[test]
    fn response_wire_format() {
        let mut ok = Response::ok(3);
        ok.images = Some(vec!["a.png".into()]);
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"v":1,"id":3,"ok":true,"images":["a.png"]}"#);
        let err = Response::error(Some(3), "boom");
        assert_eq!(serde_json::to_string(&err).unwrap(), r#"{"v":1,"id":3,"ok":false,"error":"boom"}"#);
        let hs: Handshake = serde_json::from_str(r#"{"v":1,"role":"labeller"}"#).unwrap();
        assert_eq!(hs.role, Role::Labeller);
    }
}
