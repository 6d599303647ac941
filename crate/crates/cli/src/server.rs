//! The single event loop that owns the session.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use inboxdbg::dot::to_dot;
use inboxdbg::engine::{EngineError, Links, Session};
use inboxdbg::explore::{explore_session, ExploreOptions};
use inboxdbg::fixtures::Fixture;
use inboxdbg::trace::{load_trace, write_trace_file, Trace, TraceError};
use inboxdbg::transport::{NodeLink, NodeSession, TcpTransport};
use inboxdbg::wire::{decode_command, encode_push, FrontendUpdate, ServerPush};
use inboxdbg::NodeId;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConnId(pub u64);

pub enum Input {
    Node {
        name: NodeId,
        link: NodeSession<TcpTransport>,
    },
    Connected {
        conn: ConnId,
        outbox: Sender<String>,
    },
    Command {
        conn: ConnId,
        text: String,
    },
    Disconnected(ConnId),
    Shutdown,
}

pub struct Exploration {
    pub fixture: Fixture,
    pub depth: usize,
    pub allow_drop_dup: bool,
}

pub enum Nodes {
    /// Wait for these names to register on the node port.
    Remote { expected: BTreeSet<NodeId>, wait: Duration },
    /// Host a built-in fixture in-process and explore it first.
    Explore(Exploration),
}

pub struct Config {
    pub nodes: Nodes,
    pub trace: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub export_dot: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("nodes did not register within {waited:?}: {missing:?}")]
    RegistrationTimeout { missing: Vec<NodeId>, waited: Duration },
    #[error("starting the session: {0}")]
    Start(#[source] EngineError),
    #[error("loading trace {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("exploring: {0}")]
    Explore(#[source] EngineError),
    #[error("writing {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Interrupted with a healthy session.
    Clean,
    /// Interrupted after a node failure or replay divergence.
    Faulted,
}

#[derive(Default)]
struct Frontends {
    conns: BTreeMap<ConnId, Sender<String>>,
}

impl Frontends {
    fn send(&mut self, conn: ConnId, push: &ServerPush) {
        let Some(out) = self.conns.get(&conn) else { return };
        match encode_push(push) {
            Ok(text) => {
                if out.send(text).is_err() {
                    self.conns.remove(&conn);
                }
            }
            Err(e) => log::error!("encoding push: {e}"),
        }
    }

    fn broadcast(&mut self, push: &ServerPush) {
        let ids: Vec<ConnId> = self.conns.keys().copied().collect();
        for id in ids {
            self.send(id, push);
        }
    }

    fn error(&mut self, conn: ConnId, message: impl Into<String>) {
        self.send(conn, &ServerPush::Error { message: message.into() });
    }
}

fn update(u: FrontendUpdate) -> ServerPush {
    ServerPush::Update(u)
}

/// Handles frontend traffic while there is no session yet. Returns `false`
/// on shutdown.
fn idle_input(input: Input, frontends: &mut Frontends, links: &mut Links, expected: &BTreeSet<NodeId>) -> bool {
    match input {
        Input::Node { name, link } => {
            if !expected.contains(&name) {
                log::warn!("{name} is not an expected node; closing its connection");
            } else if let Entry::Vacant(slot) = links.entry(name.clone()) {
                slot.insert(Box::new(link) as Box<dyn NodeLink>);
            } else {
                log::warn!("{name} registered twice; closing the second connection");
            }
        }
        Input::Connected { conn, outbox } => {
            frontends.conns.insert(conn, outbox);
        }
        Input::Command { conn, .. } => frontends.error(conn, "session not started: waiting for nodes"),
        Input::Disconnected(conn) => {
            frontends.conns.remove(&conn);
        }
        Input::Shutdown => return false,
    }
    true
}

fn wait_for_nodes(
    rx: &Receiver<Input>,
    frontends: &mut Frontends,
    expected: &BTreeSet<NodeId>,
    wait: Duration,
) -> Result<Option<Links>, ServerError> {
    let deadline = Instant::now() + wait;
    let mut links = Links::new();
    let names = |links: &Links| links.keys().cloned().collect::<BTreeSet<_>>();
    while names(&links) != *expected {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(input) => {
                if !idle_input(input, frontends, &mut links, expected) {
                    return Ok(None);
                }
            }
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                let have = names(&links);
                return Err(ServerError::RegistrationTimeout {
                    missing: expected.difference(&have).cloned().collect(),
                    waited: wait,
                });
            }
        }
    }
    Ok(Some(links))
}

fn explore_first(e: &Exploration, session: &mut Session) -> Result<(), ServerError> {
    let options = ExploreOptions {
        max_depth: e.depth,
        allow_drop_dup: e.allow_drop_dup,
        dedup: true,
        record_visited: false,
    };
    for invariant in &e.fixture.invariants {
        // search on a scratch session so the interactive history stays small
        let mut scratch = e.fixture.session().map_err(ServerError::Explore)?;
        let report = explore_session(&mut scratch, invariant, options).map_err(ServerError::Explore)?;
        match report.counterexample {
            Some(trace) => {
                println!(
                    "{}: \"{}\" violated after {} steps ({} states searched)",
                    e.fixture.name,
                    invariant.name,
                    trace.len(),
                    report.states_visited
                );
                print!("{}", trace.to_text());
                load_trace(&trace, session).map_err(|source| ServerError::Trace {
                    path: PathBuf::from("<explorer>"),
                    source,
                })?;
                return Ok(());
            }
            None => println!(
                "{}: \"{}\" holds to depth {} ({} states searched)",
                e.fixture.name, invariant.name, e.depth, report.states_visited
            ),
        }
    }
    Ok(())
}

fn write_outputs(config: &Config, session: &Session) -> Result<(), ServerError> {
    let leaf = session.cursor();
    if let Some(path) = &config.record {
        write_trace_file(session.tree(), leaf, path).map_err(|e| ServerError::Output {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        log::info!("recorded {} steps to {}", session.tree().depth(leaf).unwrap_or(0), path.display());
    }
    if let Some(path) = &config.export_dot {
        let dot = to_dot(session.tree(), leaf).map_err(|e| ServerError::Output {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(path, dot).map_err(|e| ServerError::Output {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        log::info!("wrote space-time diagram to {}", path.display());
    }
    Ok(())
}

pub fn run(config: Config, rx: Receiver<Input>) -> Result<Outcome, ServerError> {
    let mut frontends = Frontends::default();
    let mut session = match &config.nodes {
        Nodes::Remote { expected, wait } => {
            log::info!("waiting for {} node(s) to register", expected.len());
            let Some(links) = wait_for_nodes(&rx, &mut frontends, expected, *wait)? else {
                return Ok(Outcome::Clean);
            };
            Session::start_expecting(expected, links).map_err(ServerError::Start)?
        }
        Nodes::Explore(e) => {
            let mut session = e.fixture.session().map_err(ServerError::Start)?;
            explore_first(e, &mut session)?;
            session
        }
    };
    let names: Vec<String> = session.nodes().map(|n| n.to_string()).collect();
    log::info!("session started with {}", names.join(", "));

    if let Some(path) = &config.trace {
        let trace = Trace::read_file(path)
            .and_then(|t| load_trace(&t, &mut session))
            .map_err(|source| ServerError::Trace { path: path.clone(), source })?;
        log::info!("replayed trace to {trace}");
    }

    let _ = session.current_update();
    frontends.broadcast(&update(session.full_update()));

    let mut outcome = Outcome::Clean;
    for input in rx.iter() {
        match input {
            Input::Node { name, .. } => log::warn!("{name} registered after the session started; ignoring"),
            Input::Connected { conn, outbox } => {
                frontends.conns.insert(conn, outbox);
                frontends.send(conn, &update(session.full_update()));
            }
            Input::Disconnected(conn) => {
                frontends.conns.remove(&conn);
            }
            Input::Command { conn, text } => {
                let command = match decode_command(&text) {
                    Ok(c) => c,
                    Err(e) => {
                        frontends.error(conn, e.to_string());
                        continue;
                    }
                };
                if let Err(e) = session.apply_command(&command) {
                    if e.is_fatal() {
                        log::error!("{e}");
                        outcome = Outcome::Faulted;
                    }
                    frontends.error(conn, e.to_string());
                }
                frontends.broadcast(&update(session.current_update()));
            }
            Input::Shutdown => break,
        }
    }
    write_outputs(&config, &session)?;
    Ok(outcome)
}
