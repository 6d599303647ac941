//! Lamport's logical-clock mutual exclusion.
//!
//! Each process requests the critical section once, on its `request`
//! timeout. Requests are queued everywhere by `(timestamp, process)`. A
//! process enters when its own request heads its queue and it has heard
//! from every other process with a later timestamp. It leaves on its
//! `release` timeout and broadcasts a release.
//!
//! The algorithm assumes FIFO channels, and the debugger may reorder
//! anything, so every message carries a per-channel sequence number and
//! receivers hold back out-of-order arrivals.
//!
//! The broken variant enters as soon as its own request heads its local
//! queue, without waiting to hear from the others.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Fixture, Scenario, ScenarioStep};
use crate::explore::InvariantPredicate;
use crate::model::NodeId;
use crate::shim::{Handler, HandlerContext, HandlerError, NodeDefinition};
use crate::value::Value;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Held {
    from: String,
    kind: String,
    ts: u64,
    seq: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MutexState {
    clock: u64,
    /// Pending requests as `(timestamp, process)`, kept sorted.
    queue: Vec<(u64, String)>,
    /// Our own request's timestamp, while we want or hold the section.
    request: Option<u64>,
    in_cs: bool,
    done: bool,
    /// Latest timestamp heard from each peer.
    latest: BTreeMap<String, u64>,
    sent: BTreeMap<String, u64>,
    delivered: BTreeMap<String, u64>,
    held: Vec<Held>,
}

#[derive(Debug, Deserialize)]
struct Stamped {
    ts: u64,
    seq: u64,
}

struct Process {
    peers: Vec<String>,
    broken: bool,
}

impl Process {
    fn broadcast(&self, ctx: &mut HandlerContext<'_>, st: &mut MutexState, kind: &str, ts: u64) {
        for peer in &self.peers {
            Self::send(ctx, st, peer, kind, ts);
        }
    }

    fn send(ctx: &mut HandlerContext<'_>, st: &mut MutexState, to: &str, kind: &str, ts: u64) {
        let seq = st.sent.entry(to.to_owned()).or_insert(0);
        ctx.send(to, kind, json!({"ts": ts, "seq": *seq}));
        *seq += 1;
    }

    fn process(&self, ctx: &mut HandlerContext<'_>, st: &mut MutexState, from: &str, kind: &str, ts: u64) -> Result<(), HandlerError> {
        st.clock = st.clock.max(ts) + 1;
        let latest = st.latest.entry(from.to_owned()).or_insert(0);
        *latest = (*latest).max(ts);
        match kind {
            "request" => {
                st.queue.push((ts, from.to_owned()));
                st.queue.sort();
                st.clock += 1;
                let ack_ts = st.clock;
                Self::send(ctx, st, from, "ack", ack_ts);
            }
            "ack" => {}
            "release" => st.queue.retain(|(_, p)| p != from),
            other => return Err(HandlerError::new(format!("unknown message type {other}"))),
        }
        Ok(())
    }

    fn try_enter(&self, ctx: &mut HandlerContext<'_>, st: &mut MutexState) {
        let Some(mine) = st.request else { return };
        if st.in_cs || st.done {
            return;
        }
        let me = ctx.name().to_string();
        let heads_queue = st.queue.first() == Some(&(mine, me));
        let heard_later = self
            .peers
            .iter()
            .all(|p| st.latest.get(p).is_some_and(|&ts| ts > mine));
        if heads_queue && (self.broken || heard_later) {
            st.in_cs = true;
            ctx.set_timeout("release", json!({}));
        }
    }
}

impl Handler for Process {
    fn on_start(&self, ctx: &mut HandlerContext<'_>) -> Result<(), HandlerError> {
        ctx.store(&MutexState {
            clock: 0,
            queue: Vec::new(),
            request: None,
            in_cs: false,
            done: false,
            latest: BTreeMap::new(),
            sent: BTreeMap::new(),
            delivered: BTreeMap::new(),
            held: Vec::new(),
        })?;
        ctx.set_timeout("request", json!({}));
        Ok(())
    }

    fn on_message(&self, ctx: &mut HandlerContext<'_>, from: &NodeId, kind: &str, body: &Value) -> Result<(), HandlerError> {
        let mut st: MutexState = ctx.load()?;
        let msg: Stamped = serde_json::from_value(body.clone())?;
        st.held.push(Held {
            from: from.to_string(),
            kind: kind.to_owned(),
            ts: msg.ts,
            seq: msg.seq,
        });
        // drain everything that is next in its channel
        loop {
            let next = st.held.iter().position(|h| {
                h.seq == st.delivered.get(&h.from).copied().unwrap_or(0)
            });
            let Some(pos) = next else { break };
            let h = st.held.remove(pos);
            *st.delivered.entry(h.from.clone()).or_insert(0) += 1;
            self.process(ctx, &mut st, &h.from, &h.kind, h.ts)?;
        }
        self.try_enter(ctx, &mut st);
        ctx.store(&st)
    }

    fn on_timeout(&self, ctx: &mut HandlerContext<'_>, kind: &str, _: &Value) -> Result<(), HandlerError> {
        let mut st: MutexState = ctx.load()?;
        let me = ctx.name().to_string();
        match kind {
            "request" => {
                st.clock += 1;
                let ts = st.clock;
                st.request = Some(ts);
                st.queue.push((ts, me));
                st.queue.sort();
                self.broadcast(ctx, &mut st, "request", ts);
            }
            "release" => {
                st.in_cs = false;
                st.done = true;
                st.request = None;
                st.queue.retain(|(_, p)| *p != me);
                st.clock += 1;
                let ts = st.clock;
                self.broadcast(ctx, &mut st, "release", ts);
            }
            other => return Err(HandlerError::new(format!("unknown timeout {other}"))),
        }
        self.try_enter(ctx, &mut st);
        ctx.store(&st)
    }
}

/// Processes `P1`..`Pn`, `n >= 2`. `broken` drops the wait for replies.
pub fn fixture_lamport_mutex(n: usize, broken: bool) -> Fixture {
    assert!(n >= 2, "mutual exclusion needs at least two processes");
    let names: Vec<String> = (1..=n).map(|i| format!("P{i}")).collect();
    let exclusion = InvariantPredicate::new("mutual exclusion", |s| {
        s.states.values().filter(|v| v["in_cs"] == json!(true)).count() <= 1
    });

    let mut request_all = vec![ScenarioStep::timeout("P1", "request")];
    for peer in &names[1..] {
        request_all.push(ScenarioStep::message(peer, "P1", "request"));
    }
    for peer in &names[1..] {
        request_all.push(ScenarioStep::message("P1", peer, "ack"));
    }

    let label = if broken { "lamport-broken" } else { "lamport" };
    Fixture::new(
        format!("{label}-{n}"),
        move || {
            names
                .iter()
                .map(|name| {
                    let peers = names.iter().filter(|p| *p != name).cloned().collect();
                    NodeDefinition::new(name.as_str(), Process { peers, broken })
                })
                .collect()
        },
        vec![exclusion],
        vec![Scenario {
            name: "p1-enters",
            steps: request_all,
        }],
    )
}

#[cfg(test)]
mod tests {
    use super::super::run_scenario;
    use super::*;

    fn in_cs(s: &crate::model::SystemSnapshot, node: &str) -> bool {
        s.state(node).unwrap()["in_cs"] == json!(true)
    }

    #[test]
    fn two_processes_requester_enters_after_reply() {
        let f = fixture_lamport_mutex(2, false);
        let mut s = f.session().unwrap();
        let steps = run_scenario(&mut s, f.scenario("p1-enters").unwrap()).unwrap();
        assert_eq!(steps.len(), 3);
        // not yet after the request reached P2
        assert!(!in_cs(&s.tree().get(steps[1]).unwrap().snapshot, "P1"));
        assert!(in_cs(s.snapshot(), "P1"));
        // entering set the release timeout
        assert!(s.snapshot().inbox("P1").unwrap().timeouts.iter().any(|t| t.kind == "release"));
    }

    #[test]
    fn three_processes_need_every_reply() {
        let f = fixture_lamport_mutex(3, false);
        let mut s = f.session().unwrap();
        let steps = run_scenario(&mut s, f.scenario("p1-enters").unwrap()).unwrap();
        assert!(!in_cs(&s.tree().get(steps[3]).unwrap().snapshot, "P1"));
        assert!(in_cs(s.snapshot(), "P1"));
    }

    #[test]
    fn broken_variant_enters_immediately() {
        let f = fixture_lamport_mutex(3, true);
        let mut s = f.session().unwrap();
        run_scenario(
            &mut s,
            &Scenario {
                name: "race",
                steps: vec![ScenarioStep::timeout("P1", "request"), ScenarioStep::timeout("P2", "request")],
            },
        )
        .unwrap();
        assert!(in_cs(s.snapshot(), "P1"));
        assert!(in_cs(s.snapshot(), "P2"));
        assert_eq!(f.violations(s.snapshot()), vec!["mutual exclusion"]);
    }

    #[test]
    fn release_after_request_empties_the_queue() {
        let f = fixture_lamport_mutex(2, false);
        let mut s = f.session().unwrap();
        run_scenario(&mut s, f.scenario("p1-enters").unwrap()).unwrap();
        run_scenario(
            &mut s,
            &Scenario { name: "release", steps: vec![ScenarioStep::timeout("P1", "release")] },
        )
        .unwrap();
        let rel = s.snapshot().inbox("P2").unwrap().messages.iter().find(|m| m.kind == "release").unwrap().id;
        s.deliver(rel).unwrap();
        let st = s.snapshot().state("P2").unwrap();
        assert_eq!(st["queue"], json!([]));
        assert_eq!(st["held"], json!([]));
        assert_eq!(st["delivered"]["P1"], json!(2));
    }

    #[test]
    fn held_message_waits_for_its_predecessor() {
        let f = fixture_lamport_mutex(2, false);
        // P2's ack to P1 (seq 1) arrives before P2's request (seq 0)
        let mut s = f.session().unwrap();
        run_scenario(
            &mut s,
            &Scenario {
                name: "reorder",
                steps: vec![
                    ScenarioStep::timeout("P2", "request"),
                    ScenarioStep::timeout("P1", "request"),
                    ScenarioStep::message("P2", "P1", "request"),
                    ScenarioStep::message("P1", "P2", "ack"),
                ],
            },
        )
        .unwrap();
        let st = s.snapshot().state("P1").unwrap();
        assert_eq!(st["held"].as_array().unwrap().len(), 1);
        assert_eq!(st["held"][0]["kind"], json!("ack"));
        assert_eq!(st["delivered"].get("P2"), None);
        run_scenario(
            &mut s,
            &Scenario { name: "catch-up", steps: vec![ScenarioStep::message("P1", "P2", "request")] },
        )
        .unwrap();
        let st = s.snapshot().state("P1").unwrap();
        assert_eq!(st["held"], json!([]));
        assert_eq!(st["delivered"]["P2"], json!(2));
    }
}
