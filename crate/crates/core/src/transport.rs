//! Line transports and the server side of a node connection.

use std::collections::BTreeSet;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::model::{HandlerResponse, NodeId};
use crate::wire::{decode_frame, encode_frame, ShimFrame, WireError};

/// A bidirectional stream of newline-terminated lines.
pub trait LineTransport: Send {
    /// Writes one complete line (the bytes already end in `\n`).
    fn send_line(&mut self, line: &[u8]) -> io::Result<()>;
    /// Reads one line including its terminator; `None` on clean EOF.
    fn recv_line(&mut self) -> io::Result<Option<Vec<u8>>>;
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(TcpTransport {
            reader: BufReader::new(stream),
            writer,
        })
    }

    pub fn connect(addr: impl std::net::ToSocketAddrs) -> io::Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }
}

impl LineTransport for TcpTransport {
    fn send_line(&mut self, line: &[u8]) -> io::Result<()> {
        self.writer.write_all(line)?;
        self.writer.flush()
    }

    fn recv_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        let mut buf = Vec::new();
        let n = self.reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        if buf.last() != Some(&b'\n') {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "connection closed mid-line",
            ));
        }
        Ok(Some(buf))
    }
}

/// One end of an in-memory transport pair.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-memory transports.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelTransport { tx: a_tx, rx: a_rx },
        ChannelTransport { tx: b_tx, rx: b_rx },
    )
}

impl LineTransport for ChannelTransport {
    fn send_line(&mut self, line: &[u8]) -> io::Result<()> {
        self.tx
            .send(line.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn recv_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        Ok(self.rx.recv().ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// Shared log of every line a [`Recording`] transport moved.
pub type Transcript = Arc<Mutex<Vec<(Direction, Vec<u8>)>>>;

/// Wraps a transport and appends every line to a shared transcript.
pub struct Recording<T> {
    inner: T,
    log: Transcript,
}

impl<T: LineTransport> Recording<T> {
    pub fn new(inner: T, log: Transcript) -> Self {
        Recording { inner, log }
    }
}

impl<T: LineTransport> LineTransport for Recording<T> {
    fn send_line(&mut self, line: &[u8]) -> io::Result<()> {
        self.log
            .lock()
            .expect("transcript lock")
            .push((Direction::Sent, line.to_vec()));
        self.inner.send_line(line)
    }

    fn recv_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        let line = self.inner.recv_line()?;
        if let Some(l) = &line {
            self.log
                .lock()
                .expect("transcript lock")
                .push((Direction::Received, l.clone()));
        }
        Ok(line)
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed mid-exchange")]
    Closed,
    #[error("protocol: {0}")]
    Wire(#[from] WireError),
    #[error("expected {expected} frame, got {got}")]
    UnexpectedFrame {
        expected: &'static str,
        got: &'static str,
    },
    #[error("node name {0} is already registered")]
    DuplicateName(NodeId),
    #[error("node is unreachable after an earlier failure")]
    Unreachable,
    #[error("node failed: {0}")]
    NodeFailed(String),
}

/// Server-side handle to one node: sends an event, awaits its response.
pub trait NodeLink: Send {
    fn send_event(&mut self, frame: &ShimFrame) -> Result<HandlerResponse, LinkError>;
}

/// Names registered so far in a session. Safe to share between acceptors.
#[derive(Debug, Default)]
pub struct Registry {
    names: Mutex<BTreeSet<NodeId>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&self, name: &NodeId) -> bool {
        self.names.lock().expect("registry lock").insert(name.clone())
    }

    pub fn names(&self) -> BTreeSet<NodeId> {
        self.names.lock().expect("registry lock").clone()
    }
}

/// A registered node connection speaking the shim protocol in lockstep.
pub struct NodeSession<T> {
    transport: T,
    broken: bool,
}

impl<T: LineTransport> NodeLink for NodeSession<T> {
    fn send_event(&mut self, frame: &ShimFrame) -> Result<HandlerResponse, LinkError> {
        if self.broken {
            return Err(LinkError::Unreachable);
        }
        let result = self.exchange(frame);
        if result.is_err() {
            self.broken = true;
        }
        result
    }
}

impl<T: LineTransport> NodeSession<T> {
    fn exchange(&mut self, frame: &ShimFrame) -> Result<HandlerResponse, LinkError> {
        debug_assert!(frame.is_event());
        self.transport.send_line(&encode_frame(frame)?)?;
        let line = self.transport.recv_line()?.ok_or(LinkError::Closed)?;
        match decode_frame(&line)? {
            ShimFrame::Response(r) => Ok(r),
            other => Err(LinkError::UnexpectedFrame {
                expected: "response",
                got: other.msgtype(),
            }),
        }
    }
}

/// Reads the registration frame off a fresh connection.
pub fn accept_node<T: LineTransport>(
    mut transport: T,
    registry: &Registry,
) -> Result<(NodeId, NodeSession<T>), LinkError> {
    let line = transport.recv_line()?.ok_or(LinkError::Closed)?;
    let name = match decode_frame(&line)? {
        ShimFrame::Register { name } => NodeId::new(name),
        other => {
            return Err(LinkError::UnexpectedFrame {
                expected: "register",
                got: other.msgtype(),
            })
        }
    };
    if !registry.claim(&name) {
        return Err(LinkError::DuplicateName(name));
    }
    Ok((
        name,
        NodeSession {
            transport,
            broken: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeoutSpec;
    use serde_json::json;
    use std::thread;

    fn register(t: &mut ChannelTransport, name: &str) {
        t.send_line(&encode_frame(&ShimFrame::Register { name: name.into() }).unwrap())
            .unwrap();
    }

    #[test]
    fn register_then_duplicate_rejected() {
        let registry = Registry::new();
        let (mut node, server) = channel_pair();
        register(&mut node, "A");
        let (name, _session) = accept_node(server, &registry).unwrap();
        assert_eq!(name, "A");

        let (mut node2, server2) = channel_pair();
        register(&mut node2, "A");
        assert!(matches!(accept_node(server2, &registry), Err(LinkError::DuplicateName(n)) if n == "A"));
    }

    #[test]
    fn first_frame_must_be_register() {
        let (mut node, server) = channel_pair();
        node.send_line(&encode_frame(&ShimFrame::Start).unwrap()).unwrap();
        assert!(matches!(
            accept_node(server, &Registry::new()),
            Err(LinkError::UnexpectedFrame { expected: "register", got: "start" })
        ));
    }

    #[test]
    fn start_round_trip_with_stub_shim() {
        let (mut node, server) = channel_pair();
        let stub = thread::spawn(move || {
            register(&mut node, "A");
            let line = node.recv_line().unwrap().unwrap();
            assert_eq!(decode_frame(&line).unwrap(), ShimFrame::Start);
            node.send_line(
                b"{\"cleared\":[],\"messages\":[],\"msgtype\":\"response\",\"state\":{},\"timeouts\":[{\"body\":{},\"type\":\"E\"}]}\n",
            )
            .unwrap();
        });
        let (_, mut session) = accept_node(server, &Registry::new()).unwrap();
        let resp = session.send_event(&ShimFrame::Start).unwrap();
        stub.join().unwrap();
        assert_eq!(resp.state, json!({}));
        assert!(resp.messages.is_empty());
        assert_eq!(resp.timeouts_set, vec![TimeoutSpec::new("E", json!({}))]);
        assert!(resp.timeouts_cleared.is_empty());
    }

    #[test]
    fn closed_mid_exchange_marks_unreachable() {
        let (mut node, server) = channel_pair();
        register(&mut node, "A");
        let (_, mut session) = accept_node(server, &Registry::new()).unwrap();
        drop(node);
        assert!(session.send_event(&ShimFrame::Start).is_err());
        assert!(matches!(session.send_event(&ShimFrame::Start), Err(LinkError::Unreachable)));
    }

    #[test]
    fn recording_captures_both_directions() {
        let log: Transcript = Default::default();
        let (a, mut b) = channel_pair();
        let mut rec = Recording::new(a, log.clone());
        rec.send_line(b"x\n").unwrap();
        b.send_line(b"y\n").unwrap();
        rec.recv_line().unwrap();
        let log = log.lock().unwrap();
        assert_eq!(log[0], (Direction::Sent, b"x\n".to_vec()));
        assert_eq!(log[1], (Direction::Received, b"y\n".to_vec()));
    }
}
