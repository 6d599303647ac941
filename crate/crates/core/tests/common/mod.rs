#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use inboxdbg::engine::{Links, Session};
use inboxdbg::fixtures::Fixture;
use inboxdbg::history::HistoryId;
use inboxdbg::model::ItemId;
use inboxdbg::shim::run_node;
use inboxdbg::transport::{accept_node, Direction, NodeLink, Recording, Registry, TcpTransport, Transcript};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Deliver(ItemId),
    Drop(ItemId),
    Duplicate(ItemId),
}

/// Every action available at the cursor. Drops and duplicates only when
/// `perturb` is set.
pub fn actions(session: &Session, perturb: bool) -> Vec<Action> {
    let snap = session.snapshot();
    let mut out: Vec<Action> = snap.timeouts().map(|t| Action::Deliver(t.id)).collect();
    for m in snap.messages() {
        out.push(Action::Deliver(m.id));
        if perturb {
            out.push(Action::Drop(m.id));
            out.push(Action::Duplicate(m.id));
        }
    }
    out
}

pub fn perform(session: &mut Session, action: Action) -> HistoryId {
    match action {
        Action::Deliver(id) => session.deliver(id),
        Action::Drop(id) => session.drop_message(id),
        Action::Duplicate(id) => session.duplicate_message(id),
    }
    .expect("action on a pending item")
}

/// Takes up to `depth` uniformly random actions from the cursor. Returns the
/// history nodes visited, starting with the cursor itself.
pub fn random_run(session: &mut Session, depth: usize, perturb: bool, rng: &mut impl Rng) -> Vec<HistoryId> {
    let mut path = vec![session.cursor()];
    for _ in 0..depth {
        let Some(&action) = actions(session, perturb).choose(rng) else { break };
        path.push(perform(session, action));
    }
    path
}

/// Runs every node of `fixture` as a real shim over loopback TCP, accepting
/// them one at a time in name order so the transcript is deterministic.
pub fn tcp_session(fixture: &Fixture) -> (Session, BTreeMap<String, Transcript>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let registry = Registry::new();
    let mut defs = fixture.definitions();
    defs.sort_by(|a, b| a.name.cmp(&b.name));
    let mut links: Links = BTreeMap::new();
    let mut transcripts = BTreeMap::new();
    for def in defs {
        let transcript: Transcript = Arc::new(Mutex::new(Vec::new()));
        transcripts.insert(def.name.to_string(), transcript.clone());
        thread::spawn(move || {
            let _ = run_node(def, addr);
        });
        let (stream, _) = listener.accept().unwrap();
        let transport = Recording::new(TcpTransport::new(stream).unwrap(), transcript.clone());
        let (name, link) = accept_node(transport, &registry).unwrap();
        links.insert(name, Box::new(link) as Box<dyn NodeLink>);
    }
    (Session::start(links).unwrap(), transcripts)
}

pub fn render_transcripts(transcripts: &BTreeMap<String, Transcript>) -> String {
    let mut out = String::new();
    for (node, transcript) in transcripts {
        let _ = writeln!(out, "# {node}");
        render_into(transcript, &mut out);
    }
    out
}

fn render_into(transcript: &Transcript, out: &mut String) {
    for (dir, line) in transcript.lock().unwrap().iter() {
        let arrow = match dir {
            Direction::Sent => "->",
            Direction::Received => "<-",
        };
        let _ = write!(out, "{arrow} {}", String::from_utf8_lossy(line));
    }
}

/// The echo round trip over TCP, then a reset to just after the timeout.
pub fn echo_transcript() -> String {
    let fixture = inboxdbg::fixtures::fixture_echo();
    let (mut session, transcripts) = tcp_session(&fixture);
    let steps = inboxdbg::fixtures::run_scenario(&mut session, fixture.scenario("round-trip").unwrap()).unwrap();
    session.reset_to(steps[0]).unwrap();
    drop(session);
    render_transcripts(&transcripts)
}

pub const GOLDEN_ECHO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/echo_session.txt");
