//! Execution traces: a linear event sequence that can be written from a
//! history path and replayed into a live session.
//!
//! File format, one canonical JSON document per line:
//!
//! ```text
//! {"nodes":["client","server"],"v":1}
//! ["DELIVER_TIMEOUT","client","send",{}]
//! ["DELIVER_MSG","server",0,"client","ping"]
//! ["DROP","client",0,"server","pong"]
//! ["DUP","server",1,"client","ping"]
//! ```
//!
//! Message steps are positional: the receiving node, the index in its inbox
//! at that step, and the expected sender and type as a check. Timeout steps
//! name the node and the timeout's `(type, body)`. Item ids never appear, so
//! other tools can produce traces without knowing the debugger's id scheme.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::json;
use thiserror::Error;

use crate::engine::{EngineError, Session};
use crate::history::{HistoryError, HistoryId, HistoryTree};
use crate::model::{Event, MessageEnvelope, NodeId, SystemSnapshot};
use crate::value::{canonical, Value};

pub const TRACE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceStep {
    DeliverTimeout { node: NodeId, kind: String, body: Value },
    DeliverMessage { to: NodeId, index: usize, from: NodeId, kind: String },
    Drop { to: NodeId, index: usize, from: NodeId, kind: String },
    Duplicate { to: NodeId, index: usize, from: NodeId, kind: String },
}

impl TraceStep {
    fn tag(&self) -> &'static str {
        match self {
            TraceStep::DeliverTimeout { .. } => "DELIVER_TIMEOUT",
            TraceStep::DeliverMessage { .. } => "DELIVER_MSG",
            TraceStep::Drop { .. } => "DROP",
            TraceStep::Duplicate { .. } => "DUP",
        }
    }

    fn to_line(&self) -> String {
        let value = match self {
            TraceStep::DeliverTimeout { node, kind, body } => json!([self.tag(), node, kind, body]),
            TraceStep::DeliverMessage { to, index, from, kind }
            | TraceStep::Drop { to, index, from, kind }
            | TraceStep::Duplicate { to, index, from, kind } => {
                json!([self.tag(), to, index, from, kind])
            }
        };
        canonical(&value)
    }

    fn parse(value: Value) -> Result<TraceStep, String> {
        let Value::Array(items) = value else {
            return Err("step is not an array".into());
        };
        let text = |i: usize| -> Result<String, String> {
            items
                .get(i)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| format!("field {i} must be a string"))
        };
        let tag = text(0)?;
        let positional = || -> Result<(NodeId, usize, NodeId, String), String> {
            if items.len() != 5 {
                return Err(format!("{tag} takes 4 fields"));
            }
            let index = items[2]
                .as_u64()
                .ok_or_else(|| "index must be a non-negative integer".to_owned())?;
            Ok((text(1)?.into(), index as usize, text(3)?.into(), text(4)?))
        };
        match tag.as_str() {
            "DELIVER_TIMEOUT" => {
                if items.len() != 4 {
                    return Err("DELIVER_TIMEOUT takes 3 fields".into());
                }
                Ok(TraceStep::DeliverTimeout {
                    node: text(1)?.into(),
                    kind: text(2)?,
                    body: items[3].clone(),
                })
            }
            "DELIVER_MSG" => {
                let (to, index, from, kind) = positional()?;
                Ok(TraceStep::DeliverMessage { to, index, from, kind })
            }
            "DROP" => {
                let (to, index, from, kind) = positional()?;
                Ok(TraceStep::Drop { to, index, from, kind })
            }
            "DUP" => {
                let (to, index, from, kind) = positional()?;
                Ok(TraceStep::Duplicate { to, index, from, kind })
            }
            other => Err(format!("unknown step {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub nodes: Vec<NodeId>,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad trace header: {0}")]
    Header(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("trace nodes {trace:?} do not match session nodes {session:?}")]
    NodeMismatch {
        trace: Vec<NodeId>,
        session: Vec<NodeId>,
    },
    #[error("step {step}: {reason}")]
    Mismatch { step: usize, reason: String },
    #[error("step {step}: {source}")]
    Engine {
        step: usize,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    History(#[from] HistoryError),
}

fn message_position(snapshot: &SystemSnapshot, message: &MessageEnvelope) -> usize {
    snapshot.inboxes[&message.to]
        .messages
        .iter()
        .position(|m| m.id == message.id)
        .expect("history events reference items present in the parent snapshot")
}

impl Trace {
    /// The path from the root to `leaf`, in positional form.
    pub fn from_history(tree: &HistoryTree, leaf: HistoryId) -> Result<Trace, HistoryError> {
        let path = tree.path_nodes(leaf)?;
        let nodes = path[0].snapshot.nodes().cloned().collect();
        let steps = path
            .windows(2)
            .map(|pair| {
                let parent = &pair[0].snapshot;
                let positional = |m: &MessageEnvelope| {
                    (m.to.clone(), message_position(parent, m), m.from.clone(), m.kind.clone())
                };
                match &pair[1].event {
                    Event::DeliverTimeout { timeout } => TraceStep::DeliverTimeout {
                        node: timeout.node.clone(),
                        kind: timeout.kind.clone(),
                        body: timeout.body.clone(),
                    },
                    Event::DeliverMessage { message } => {
                        let (to, index, from, kind) = positional(message);
                        TraceStep::DeliverMessage { to, index, from, kind }
                    }
                    Event::DropMessage { message } => {
                        let (to, index, from, kind) = positional(message);
                        TraceStep::Drop { to, index, from, kind }
                    }
                    Event::DuplicateMessage { original, .. } => {
                        let (to, index, from, kind) = positional(original);
                        TraceStep::Duplicate { to, index, from, kind }
                    }
                    Event::Start => unreachable!("start only at the root"),
                }
            })
            .collect();
        Ok(Trace { nodes, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = canonical(&json!({"nodes": self.nodes, "v": TRACE_VERSION}));
        out.push('\n');
        for step in &self.steps {
            out.push_str(&step.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| TraceError::Header("empty file".into()))?;
        let header: Value =
            serde_json::from_str(header).map_err(|e| TraceError::Header(e.to_string()))?;
        match header.get("v").and_then(Value::as_u64) {
            Some(TRACE_VERSION) => {}
            other => return Err(TraceError::Header(format!("unsupported version {other:?}"))),
        }
        let nodes: Vec<NodeId> = header
            .get("nodes")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| TraceError::Header(e.to_string()))?
            .ok_or_else(|| TraceError::Header("missing nodes".into()))?;

        let mut steps = Vec::new();
        for (i, line) in lines {
            let value: Value = serde_json::from_str(line).map_err(|e| TraceError::Syntax {
                line: i + 1,
                reason: e.to_string(),
            })?;
            steps.push(TraceStep::parse(value).map_err(|reason| TraceError::Syntax {
                line: i + 1,
                reason,
            })?);
        }
        Ok(Trace { nodes, steps })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Writes the path from the root to `leaf` in trace format.
pub fn write_trace(tree: &HistoryTree, leaf: HistoryId, mut dest: impl Write) -> Result<(), TraceError> {
    let trace = Trace::from_history(tree, leaf)?;
    dest.write_all(trace.to_text().as_bytes())?;
    dest.flush()?;
    Ok(())
}

pub fn write_trace_file(tree: &HistoryTree, leaf: HistoryId, path: impl AsRef<Path>) -> Result<(), TraceError> {
    write_trace(tree, leaf, fs::File::create(path)?)
}

fn resolve_message<'a>(
    snapshot: &'a SystemSnapshot,
    step: usize,
    to: &NodeId,
    index: usize,
    from: &NodeId,
    kind: &str,
) -> Result<&'a MessageEnvelope, TraceError> {
    let inbox = snapshot.inboxes.get(to).ok_or_else(|| TraceError::Mismatch {
        step,
        reason: format!("no node {to}"),
    })?;
    let message = inbox.messages.get(index).ok_or_else(|| TraceError::Mismatch {
        step,
        reason: format!("{to} has no message at index {index}"),
    })?;
    if &message.from != from || message.kind != kind {
        return Err(TraceError::Mismatch {
            step,
            reason: format!(
                "{to}[{index}] is {} from {}, trace expects {kind} from {from}",
                message.kind, message.from
            ),
        });
    }
    Ok(message)
}

/// Replays `trace` from the root of `session`, building a linear branch.
/// Returns the history node at the end of the trace.
pub fn load_trace(trace: &Trace, session: &mut Session) -> Result<HistoryId, TraceError> {
    let ours: BTreeSet<&NodeId> = session.nodes().collect();
    let theirs: BTreeSet<&NodeId> = trace.nodes.iter().collect();
    if ours != theirs {
        return Err(TraceError::NodeMismatch {
            trace: trace.nodes.clone(),
            session: session.nodes().cloned().collect(),
        });
    }
    let root = session.tree().root();
    session
        .reset_to(root)
        .map_err(|source| TraceError::Engine { step: 0, source })?;

    for (i, step) in trace.steps.iter().enumerate() {
        let n = i + 1;
        let snapshot = session.snapshot();
        let engine = |source| TraceError::Engine { step: n, source };
        match step {
            TraceStep::DeliverTimeout { node, kind, body } => {
                let wanted = canonical(body);
                let id = snapshot
                    .inboxes
                    .get(node)
                    .and_then(|inbox| {
                        inbox
                            .timeouts
                            .iter()
                            .find(|t| &t.kind == kind && canonical(&t.body) == wanted)
                    })
                    .map(|t| t.id)
                    .ok_or_else(|| TraceError::Mismatch {
                        step: n,
                        reason: format!("no pending timeout {kind} {wanted} at {node}"),
                    })?;
                session.deliver_timeout(id).map_err(engine)?;
            }
            TraceStep::DeliverMessage { to, index, from, kind } => {
                let id = resolve_message(snapshot, n, to, *index, from, kind)?.id;
                session.deliver_message(id).map_err(engine)?;
            }
            TraceStep::Drop { to, index, from, kind } => {
                let id = resolve_message(snapshot, n, to, *index, from, kind)?.id;
                session.drop_message(id).map_err(engine)?;
            }
            TraceStep::Duplicate { to, index, from, kind } => {
                let id = resolve_message(snapshot, n, to, *index, from, kind)?.id;
                session.duplicate_message(id).map_err(engine)?;
            }
        }
    }
    Ok(session.cursor())
}
