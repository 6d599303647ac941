use std::collections::{BTreeMap, BTreeSet};

use inboxdbg::explore::{explore, explore_session, ExploreOptions, InvariantPredicate};
use inboxdbg::fixtures::{fixture_echo, fixture_lamport_mutex, fixture_toy_election, Fixture};
use inboxdbg::model::{apply_delivery, apply_drop, apply_duplicate, apply_start, Event, IdCounter, NodeId, SystemSnapshot};
use inboxdbg::shim::NodeRunner;
use inboxdbg::trace::{load_trace, TraceStep};
use inboxdbg::wire::ShimFrame;

/// Recursive enumeration straight over the transition functions, with
/// handlers evaluated on the recorded node state. No session, no replay.
struct BruteForce {
    runners: BTreeMap<NodeId, NodeRunner>,
    drop_dup: bool,
    seen: BTreeSet<String>,
}

impl BruteForce {
    fn new(fixture: &Fixture, drop_dup: bool) -> Self {
        let runners = fixture
            .definitions()
            .into_iter()
            .map(|d| (d.name.clone(), NodeRunner::new(d)))
            .collect();
        BruteForce { runners, drop_dup, seen: BTreeSet::new() }
    }

    fn root(&mut self, ids: &mut IdCounter) -> SystemSnapshot {
        let mut snap = SystemSnapshot::initial(self.runners.keys().cloned());
        for (name, runner) in self.runners.iter_mut() {
            let resp = runner.handle(&ShimFrame::Start).unwrap();
            snap = apply_start(&snap, name, &resp, ids).unwrap();
        }
        snap
    }

    fn deliver(&mut self, snap: &SystemSnapshot, event: &Event, ids: &mut IdCounter) -> SystemSnapshot {
        let (node, frame) = match event {
            Event::DeliverMessage { message: m } => (
                m.to.clone(),
                ShimFrame::Message { from: m.from.clone(), kind: m.kind.clone(), body: m.body.clone() },
            ),
            Event::DeliverTimeout { timeout: t } => (
                t.node.clone(),
                ShimFrame::Timeout { kind: t.kind.clone(), body: t.body.clone() },
            ),
            _ => unreachable!(),
        };
        let runner = self.runners.get_mut(&node).unwrap();
        runner.restore(snap.states[&node].clone());
        let resp = runner.handle(&frame).unwrap();
        apply_delivery(snap, event, &resp, ids).unwrap()
    }

    fn walk(&mut self, snap: SystemSnapshot, depth: usize, ids: &mut IdCounter) {
        self.seen.insert(snap.shape_key());
        if depth == 0 {
            return;
        }
        let messages: Vec<_> = snap.messages().cloned().collect();
        let timeouts: Vec<_> = snap.timeouts().cloned().collect();
        for m in messages {
            let next = self.deliver(&snap, &Event::DeliverMessage { message: m.clone() }, ids);
            self.walk(next, depth - 1, ids);
            if self.drop_dup {
                self.walk(apply_drop(&snap, m.id).unwrap(), depth - 1, ids);
                let copy = ids.fresh();
                self.walk(apply_duplicate(&snap, m.id, copy).unwrap(), depth - 1, ids);
            }
        }
        for t in timeouts {
            let next = self.deliver(&snap, &Event::DeliverTimeout { timeout: t }, ids);
            self.walk(next, depth - 1, ids);
        }
    }

    fn states(fixture: &Fixture, depth: usize, drop_dup: bool) -> BTreeSet<String> {
        let mut bf = BruteForce::new(fixture, drop_dup);
        let mut ids = IdCounter::starting_at(0);
        let root = bf.root(&mut ids);
        bf.walk(root, depth, &mut ids);
        bf.seen
    }
}

fn never() -> InvariantPredicate {
    InvariantPredicate::new("always holds", |_| true)
}

fn explored_states(fixture: &Fixture, depth: usize, drop_dup: bool, dedup: bool) -> BTreeSet<String> {
    let mut session = fixture.session().unwrap();
    let options = ExploreOptions {
        max_depth: depth,
        allow_drop_dup: drop_dup,
        dedup,
        record_visited: true,
    };
    let report = explore_session(&mut session, &never(), options).unwrap();
    assert!(report.counterexample.is_none());
    report.visited_shapes
}

fn assert_complete(fixture: &Fixture, depth: usize, drop_dup: bool) {
    let expected = BruteForce::states(fixture, depth, drop_dup);
    for dedup in [false, true] {
        let got = explored_states(fixture, depth, drop_dup, dedup);
        assert_eq!(got.len(), expected.len(), "{} depth {depth} dedup {dedup}", fixture.name);
        assert_eq!(got, expected, "{} depth {depth} dedup {dedup}", fixture.name);
    }
}

#[test]
fn echo_visits_exactly_the_brute_force_states() {
    assert_complete(&fixture_echo(), 6, false);
}

#[test]
fn echo_with_drop_and_duplicate_matches_brute_force() {
    assert_complete(&fixture_echo(), 4, true);
}

#[test]
fn election_visits_exactly_the_brute_force_states() {
    assert_complete(&fixture_toy_election(3), 3, false);
}

#[test]
fn lamport_pair_visits_exactly_the_brute_force_states() {
    assert_complete(&fixture_lamport_mutex(2, false), 6, false);
}

fn single_ping_server() -> InvariantPredicate {
    InvariantPredicate::new("server never has 2 pings", |s| {
        s.state("server").and_then(|v| v["pings"].as_i64()).unwrap_or(0) < 2
    })
}

#[test]
fn echo_needs_a_duplicate_to_double_count() {
    let f = fixture_echo();
    let inv = single_ping_server();
    assert!(explore(|| f.session(), &inv, 6).unwrap().is_none());

    let mut session = f.session().unwrap();
    let options = ExploreOptions { allow_drop_dup: true, ..ExploreOptions::depth(6) };
    let report = explore_session(&mut session, &inv, options).unwrap();
    let trace = report.counterexample.expect("violation with duplication");
    assert!(trace.steps.iter().any(|s| matches!(s, TraceStep::Duplicate { .. })));
    let path = session.tree().path_nodes(report.violation_at.unwrap()).unwrap();
    assert!(path.iter().any(|n| matches!(n.event, Event::DuplicateMessage { .. })));
    assert!(!inv.holds(&path.last().unwrap().snapshot));
}

#[test]
fn counterexample_from_the_broken_mutex_replays() {
    let f = fixture_lamport_mutex(3, true);
    let inv = f.invariant("mutual exclusion").unwrap();
    let trace = explore(|| f.session(), inv, 12).unwrap().expect("violation");
    assert!(trace.len() <= 12);
    let mut fresh = f.session().unwrap();
    let leaf = load_trace(&trace, &mut fresh).unwrap();
    let snap = &fresh.tree().get(leaf).unwrap().snapshot;
    let holders = snap.states.values().filter(|v| v["in_cs"] == true).count();
    assert!(holders >= 2);
}

#[test]
fn shallow_bound_finds_nothing() {
    let f = fixture_lamport_mutex(3, true);
    let inv = f.invariant("mutual exclusion").unwrap();
    // two requests are needed before anyone can be in the section alongside another
    assert!(explore(|| f.session(), inv, 1).unwrap().is_none());
}

#[test]
fn dedup_prunes_without_losing_states() {
    let f = fixture_toy_election(3);
    let mut plain = f.session().unwrap();
    let full = explore_session(&mut plain, &never(), ExploreOptions { record_visited: true, ..ExploreOptions::depth(3) }).unwrap();
    let mut pruned = f.session().unwrap();
    let fewer = explore_session(
        &mut pruned,
        &never(),
        ExploreOptions { record_visited: true, dedup: true, ..ExploreOptions::depth(3) },
    )
    .unwrap();
    assert!(fewer.states_visited < full.states_visited);
    assert_eq!(fewer.visited_shapes, full.visited_shapes);
}

#[test]
fn violation_at_the_root_is_an_empty_trace() {
    let f = fixture_echo();
    let inv = InvariantPredicate::new("nothing pending", |s| s.timeouts().next().is_none());
    let trace = explore(|| f.session(), &inv, 3).unwrap().unwrap();
    assert!(trace.is_empty());
}
