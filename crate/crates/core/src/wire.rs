//! Line-oriented wire formats.
//!
//! Node-facing frames carry a `msgtype` tag and mirror the shim API:
//! `register(name)`, `start`, `timeout(type, body)`, `message(from, type,
//! body)` and `response(state, messages, timeouts, cleared)`. Every frame is
//! one line of canonical JSON followed by `\n`. The frontend channel uses the
//! same serialization for [`FrontendCommand`] and [`ServerPush`].

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};
use thiserror::Error;

use crate::history::HistoryId;
use crate::model::{Event, HandlerResponse, ItemId, NodeId, OutgoingMessage, SystemSnapshot, TimeoutSpec};
use crate::value::{canonical, to_canonical, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum ShimFrame {
    Register { name: String },
    Start,
    Timeout { kind: String, body: Value },
    Message { from: NodeId, kind: String, body: Value },
    Response(HandlerResponse),
}

impl ShimFrame {
    pub fn msgtype(&self) -> &'static str {
        match self {
            ShimFrame::Register { .. } => "register",
            ShimFrame::Start => "start",
            ShimFrame::Timeout { .. } => "timeout",
            ShimFrame::Message { .. } => "message",
            ShimFrame::Response(_) => "response",
        }
    }

    /// True for the frames the server sends to a node.
    pub fn is_event(&self) -> bool {
        matches!(
            self,
            ShimFrame::Start | ShimFrame::Timeout { .. } | ShimFrame::Message { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame must be exactly one newline-terminated line")]
    NotOneLine,
    #[error("unknown msgtype {0:?}")]
    UnknownMsgType(String),
    #[error("{msgtype} frame is missing field {field:?}")]
    MissingField {
        msgtype: String,
        field: &'static str,
    },
    #[error("invalid field {field:?}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("cannot serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn specs_to_value(specs: &[TimeoutSpec]) -> Value {
    Value::Array(
        specs
            .iter()
            .map(|s| json!({"type": s.kind, "body": s.body}))
            .collect(),
    )
}

/// Canonical bytes of a frame, including the trailing newline.
pub fn encode_frame(frame: &ShimFrame) -> Result<Vec<u8>, WireError> {
    let value = match frame {
        ShimFrame::Register { name } => json!({"msgtype": "register", "name": name}),
        ShimFrame::Start => json!({"msgtype": "start"}),
        ShimFrame::Timeout { kind, body } => {
            json!({"msgtype": "timeout", "type": kind, "body": body})
        }
        ShimFrame::Message { from, kind, body } => {
            json!({"msgtype": "message", "from": from, "type": kind, "body": body})
        }
        ShimFrame::Response(r) => json!({
            "msgtype": "response",
            "state": r.state,
            "messages": serde_json::to_value(&r.messages)?,
            "timeouts": specs_to_value(&r.timeouts_set),
            "cleared": specs_to_value(&r.timeouts_cleared),
        }),
    };
    let mut bytes = canonical(&value).into_bytes();
    bytes.push(b'\n');
    Ok(bytes)
}

fn strip_line(bytes: &[u8]) -> Result<&str, WireError> {
    let text = std::str::from_utf8(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.contains('\n') {
        return Err(WireError::NotOneLine);
    }
    Ok(text)
}

struct Fields<'a> {
    msgtype: &'a str,
    map: Map<String, Value>,
}

impl Fields<'_> {
    fn take(&mut self, field: &'static str) -> Result<Value, WireError> {
        self.map.remove(field).ok_or_else(|| WireError::MissingField {
            msgtype: self.msgtype.to_owned(),
            field,
        })
    }

    fn take_as<T: DeserializeOwned>(&mut self, field: &'static str) -> Result<T, WireError> {
        let value = self.take(field)?;
        serde_json::from_value(value).map_err(|e| WireError::InvalidField {
            field,
            reason: e.to_string(),
        })
    }
}

/// Parses one newline-terminated frame. Unknown fields are ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<ShimFrame, WireError> {
    let text = strip_line(bytes)?;
    let value: Value = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(WireError::Malformed("frame is not an object".into()));
    };
    let msgtype = match map.remove("msgtype") {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(WireError::InvalidField {
                field: "msgtype",
                reason: "not a string".into(),
            })
        }
        None => {
            return Err(WireError::MissingField {
                msgtype: "?".into(),
                field: "msgtype",
            })
        }
    };
    let mut f = Fields {
        msgtype: &msgtype,
        map,
    };
    let frame = match msgtype.as_str() {
        "register" => {
            let name: String = f.take_as("name")?;
            if name.is_empty() {
                return Err(WireError::InvalidField {
                    field: "name",
                    reason: "empty node name".into(),
                });
            }
            ShimFrame::Register { name }
        }
        "start" => ShimFrame::Start,
        "timeout" => ShimFrame::Timeout {
            kind: f.take_as("type")?,
            body: f.take("body")?,
        },
        "message" => ShimFrame::Message {
            from: f.take_as("from")?,
            kind: f.take_as("type")?,
            body: f.take("body")?,
        },
        "response" => ShimFrame::Response(HandlerResponse {
            state: f.take("state")?,
            messages: f.take_as::<Vec<OutgoingMessage>>("messages")?,
            timeouts_set: f.take_as::<Vec<TimeoutSpec>>("timeouts")?,
            timeouts_cleared: f.take_as::<Vec<TimeoutSpec>>("cleared")?,
        }),
        other => return Err(WireError::UnknownMsgType(other.to_owned())),
    };
    Ok(frame)
}

/// A user action sent by the frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "camelCase")]
pub enum FrontendCommand {
    DeliverMessage { id: ItemId },
    DeliverTimeout { id: ItemId },
    DropMessage { id: ItemId },
    DuplicateMessage { id: ItemId },
    ResetTo {
        #[serde(rename = "historyNodeId")]
        history_node_id: HistoryId,
    },
    LoadTrace { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub id: HistoryId,
    pub parent: Option<HistoryId>,
    pub summary: String,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendUpdate {
    pub snapshot: SystemSnapshot,
    #[serde(rename = "historyDelta")]
    pub history_delta: Vec<HistoryEntry>,
    pub cursor: HistoryId,
}

/// Everything the server pushes to a frontend connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ServerPush {
    Update(FrontendUpdate),
    Error { message: String },
}

pub fn encode_push(push: &ServerPush) -> Result<String, WireError> {
    Ok(to_canonical(push)?)
}

pub fn decode_push(text: &str) -> Result<ServerPush, WireError> {
    serde_json::from_str(text.trim_end()).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn encode_command(command: &FrontendCommand) -> Result<String, WireError> {
    Ok(to_canonical(command)?)
}

pub fn decode_command(text: &str) -> Result<FrontendCommand, WireError> {
    serde_json::from_str(text.trim_end()).map_err(|e| WireError::Malformed(e.to_string()))
}
