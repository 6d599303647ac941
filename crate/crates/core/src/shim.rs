//! Node-side library: write a system as deterministic event handlers and let
//! the shim speak the wire protocol.
//!
//! A handler sees the node's local state and a buffer of effects. When it
//! returns, the shim replies with exactly one `response` frame carrying the
//! full state and every buffered effect. A `start` frame always resets the
//! local state to an empty map before `on_start` runs, which is what makes
//! replay-based time travel work.
//!
//! Handlers must be deterministic functions of (local state, event) and must
//! not perform I/O or spawn threads.

use std::net::ToSocketAddrs;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{HandlerResponse, NodeId, OutgoingMessage, TimeoutSpec};
use crate::transport::{LineTransport, LinkError, NodeLink, TcpTransport};
use crate::value::{empty_state, Value};
use crate::wire::{decode_frame, encode_frame, ShimFrame, WireError};

/// Environment variable naming the debugger's node endpoint.
pub const SERVER_ENV: &str = "INBOXDBG_SERVER";
pub const DEFAULT_SERVER: &str = "127.0.0.1:4343";

pub fn server_address_from_env() -> String {
    std::env::var(SERVER_ENV).unwrap_or_else(|_| DEFAULT_SERVER.to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

impl HandlerError {
    pub fn new(msg: impl Into<String>) -> Self {
        HandlerError(msg.into())
    }
}

impl From<serde_json::Error> for HandlerError {
    fn from(e: serde_json::Error) -> Self {
        HandlerError(format!("state serialization: {e}"))
    }
}

#[derive(Debug, Error)]
pub enum ShimError {
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Wire(#[from] WireError),
    #[error("server sent a {0} frame")]
    Protocol(&'static str),
    #[error("handler failed on {event}: {source}")]
    Handler {
        event: &'static str,
        #[source]
        source: HandlerError,
    },
}

/// What a handler may read and do during one event.
pub struct HandlerContext<'a> {
    name: &'a NodeId,
    state: &'a mut Value,
    messages: Vec<OutgoingMessage>,
    set: Vec<TimeoutSpec>,
    cleared: Vec<TimeoutSpec>,
}

impl<'a> HandlerContext<'a> {
    fn new(name: &'a NodeId, state: &'a mut Value) -> Self {
        HandlerContext {
            name,
            state,
            messages: Vec::new(),
            set: Vec::new(),
            cleared: Vec::new(),
        }
    }

    pub fn name(&self) -> &NodeId {
        self.name
    }

    pub fn state(&self) -> &Value {
        self.state
    }

    pub fn state_mut(&mut self) -> &mut Value {
        self.state
    }

    pub fn set_state(&mut self, state: Value) {
        *self.state = state;
    }

    /// Decodes the local state into a typed value.
    pub fn load<T: DeserializeOwned>(&self) -> Result<T, HandlerError> {
        Ok(serde_json::from_value(self.state.clone())?)
    }

    /// Replaces the local state with a typed value.
    pub fn store<T: Serialize>(&mut self, state: &T) -> Result<(), HandlerError> {
        *self.state = serde_json::to_value(state)?;
        Ok(())
    }

    pub fn send(&mut self, to: impl Into<NodeId>, kind: impl Into<String>, body: Value) {
        self.messages.push(OutgoingMessage {
            to: to.into(),
            kind: kind.into(),
            body,
        });
    }

    pub fn set_timeout(&mut self, kind: impl Into<String>, body: Value) {
        self.set.push(TimeoutSpec::new(kind, body));
    }

    pub fn clear_timeout(&mut self, kind: impl Into<String>, body: Value) {
        self.cleared.push(TimeoutSpec::new(kind, body));
    }

    fn finish(self) -> HandlerResponse {
        HandlerResponse {
            state: self.state.clone(),
            messages: self.messages,
            timeouts_set: self.set,
            timeouts_cleared: self.cleared,
        }
    }
}

/// Event handlers of one node.
pub trait Handler: Send {
    fn on_start(&self, ctx: &mut HandlerContext<'_>) -> Result<(), HandlerError>;

    fn on_message(
        &self,
        ctx: &mut HandlerContext<'_>,
        from: &NodeId,
        kind: &str,
        body: &Value,
    ) -> Result<(), HandlerError>;

    fn on_timeout(
        &self,
        ctx: &mut HandlerContext<'_>,
        kind: &str,
        body: &Value,
    ) -> Result<(), HandlerError>;
}

pub struct NodeDefinition {
    pub name: NodeId,
    pub handler: Box<dyn Handler>,
}

impl NodeDefinition {
    pub fn new(name: impl Into<NodeId>, handler: impl Handler + 'static) -> Self {
        NodeDefinition {
            name: name.into(),
            handler: Box::new(handler),
        }
    }
}

/// A node's handlers plus its current local state.
pub struct NodeRunner {
    def: NodeDefinition,
    state: Value,
}

impl NodeRunner {
    pub fn new(def: NodeDefinition) -> Self {
        NodeRunner {
            def,
            state: empty_state(),
        }
    }

    pub fn name(&self) -> &NodeId {
        &self.def.name
    }

    pub fn state(&self) -> &Value {
        &self.state
    }

    /// Overwrites the local state, e.g. to run a handler against a state
    /// recorded in some snapshot.
    pub fn restore(&mut self, state: Value) {
        self.state = state;
    }

    /// Runs the matching handler for one event frame.
    pub fn handle(&mut self, frame: &ShimFrame) -> Result<HandlerResponse, ShimError> {
        let NodeRunner { def, state } = self;
        if *frame == ShimFrame::Start {
            *state = empty_state();
        }
        let mut ctx = HandlerContext::new(&def.name, state);
        let (event, result) = match frame {
            ShimFrame::Start => ("start", def.handler.on_start(&mut ctx)),
            ShimFrame::Timeout { kind, body } => ("timeout", def.handler.on_timeout(&mut ctx, kind, body)),
            ShimFrame::Message { from, kind, body } => {
                ("message", def.handler.on_message(&mut ctx, from, kind, body))
            }
            other => return Err(ShimError::Protocol(other.msgtype())),
        };
        match result {
            Ok(()) => Ok(ctx.finish()),
            Err(source) => Err(ShimError::Handler { event, source }),
        }
    }

    /// Bytes in, bytes out: decode one event line and encode the response.
    pub fn handle_line(&mut self, line: &[u8]) -> Result<Vec<u8>, ShimError> {
        let frame = decode_frame(line)?;
        let response = self.handle(&frame)?;
        Ok(encode_frame(&ShimFrame::Response(response))?)
    }
}

/// Registers over `transport` and serves events until the server hangs up.
///
/// A handler failure ends the session: the diagnostic is logged, the
/// connection is closed and the error is returned.
pub fn run_on<T: LineTransport>(def: NodeDefinition, mut transport: T) -> Result<(), ShimError> {
    let register = ShimFrame::Register {
        name: def.name.to_string(),
    };
    transport.send_line(&encode_frame(&register)?)?;
    let mut runner = NodeRunner::new(def);
    while let Some(line) = transport.recv_line()? {
        match runner.handle_line(&line) {
            Ok(reply) => transport.send_line(&reply)?,
            Err(e) => {
                log::error!("node {}: {e}; closing session", runner.name());
                return Err(e);
            }
        }
    }
    Ok(())
}

/// Connects to the debugger over TCP and runs the node's event loop.
pub fn run_node(def: NodeDefinition, server: impl ToSocketAddrs) -> Result<(), ShimError> {
    run_on(def, TcpTransport::connect(server)?)
}

/// A node hosted in the debugger's own process. Frames still go through the
/// codec, so this exercises the same bytes a remote shim would see.
pub struct InProcessNode {
    runner: NodeRunner,
}

impl InProcessNode {
    pub fn new(def: NodeDefinition) -> Self {
        InProcessNode {
            runner: NodeRunner::new(def),
        }
    }
}

impl NodeLink for InProcessNode {
    fn send_event(&mut self, frame: &ShimFrame) -> Result<HandlerResponse, LinkError> {
        let line = encode_frame(frame)?;
        let reply = self
            .runner
            .handle_line(&line)
            .map_err(|e| LinkError::NodeFailed(e.to_string()))?;
        match decode_frame(&reply)? {
            ShimFrame::Response(r) => Ok(r),
            other => Err(LinkError::UnexpectedFrame {
                expected: "response",
                got: other.msgtype(),
            }),
        }
    }
}
