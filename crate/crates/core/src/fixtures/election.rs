//! Term-based leader election, the voting half of Raft.
//!
//! An `E` timeout makes a node a candidate for the next term and sends `RV`
//! to every other member of the configuration. A node grants at most one
//! vote per term and answers with `V`. A candidate holding votes from a
//! majority of the configuration becomes leader.
//!
//! With five nodes, `S5` starts outside the configuration: it has an `E`
//! timeout like everyone else, but candidates only canvass `S1`..`S4`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Fixture, Scenario, ScenarioStep};
use crate::explore::InvariantPredicate;
use crate::model::NodeId;
use crate::shim::{Handler, HandlerContext, HandlerError, NodeDefinition};
use crate::value::Value;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ElectionState {
    term: u64,
    #[serde(rename = "votedFor")]
    voted_for: Option<String>,
    leader: bool,
    votes: Vec<String>,
    config: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct VoteRequest {
    term: u64,
}

#[derive(Debug, Deserialize)]
struct Vote {
    term: u64,
    granted: bool,
}

struct Member {
    config: Vec<String>,
}

fn restart_election_timer(ctx: &mut HandlerContext<'_>) {
    ctx.clear_timeout("E", json!({}));
    ctx.set_timeout("E", json!({}));
}

impl ElectionState {
    fn step_down(&mut self, term: u64) {
        self.term = term;
        self.voted_for = None;
        self.leader = false;
        self.votes.clear();
    }
}

impl Handler for Member {
    fn on_start(&self, ctx: &mut HandlerContext<'_>) -> Result<(), HandlerError> {
        ctx.store(&ElectionState {
            term: 0,
            voted_for: None,
            leader: false,
            votes: Vec::new(),
            config: self.config.clone(),
        })?;
        ctx.set_timeout("E", json!({}));
        Ok(())
    }

    fn on_message(&self, ctx: &mut HandlerContext<'_>, from: &NodeId, kind: &str, body: &Value) -> Result<(), HandlerError> {
        let mut st: ElectionState = ctx.load()?;
        match kind {
            "RV" => {
                let req: VoteRequest = serde_json::from_value(body.clone())?;
                if req.term > st.term {
                    st.step_down(req.term);
                }
                let granted = req.term == st.term
                    && st.voted_for.as_deref().is_none_or(|v| v == from.as_str());
                if granted {
                    st.voted_for = Some(from.to_string());
                    restart_election_timer(ctx);
                }
                ctx.send(from.clone(), "V", json!({"term": st.term, "granted": granted}));
            }
            "V" => {
                let vote: Vote = serde_json::from_value(body.clone())?;
                if vote.term > st.term {
                    st.step_down(vote.term);
                } else if vote.term == st.term && vote.granted && !st.leader {
                    if !st.votes.iter().any(|v| v == from.as_str()) {
                        st.votes.push(from.to_string());
                    }
                    if st.votes.len() * 2 > st.config.len() {
                        st.leader = true;
                        ctx.clear_timeout("E", json!({}));
                    }
                }
            }
            other => return Err(HandlerError::new(format!("unknown message type {other}"))),
        }
        ctx.store(&st)
    }

    fn on_timeout(&self, ctx: &mut HandlerContext<'_>, kind: &str, _: &Value) -> Result<(), HandlerError> {
        if kind != "E" {
            return Err(HandlerError::new(format!("unknown timeout {kind}")));
        }
        let mut st: ElectionState = ctx.load()?;
        let me = ctx.name().to_string();
        st.term += 1;
        st.voted_for = Some(me.clone());
        st.leader = false;
        st.votes = vec![me.clone()];
        for peer in st.config.iter().filter(|p| **p != me) {
            ctx.send(peer.as_str(), "RV", json!({"term": st.term}));
        }
        restart_election_timer(ctx);
        ctx.store(&st)
    }
}

/// Nodes `S1`..`Sn`, `n >= 3`.
pub fn fixture_toy_election(n: usize) -> Fixture {
    assert!(n >= 3, "election fixture needs at least three nodes");
    let names: Vec<String> = (1..=n).map(|i| format!("S{i}")).collect();
    let config: Vec<String> = if n == 5 { names[..4].to_vec() } else { names.clone() };

    let one_leader_per_term = InvariantPredicate::new("one leader per term", |s| {
        let mut terms: Vec<u64> = s
            .states
            .values()
            .filter(|v| v["leader"] == json!(true))
            .filter_map(|v| v["term"].as_u64())
            .collect();
        let total = terms.len();
        terms.sort_unstable();
        terms.dedup();
        terms.len() == total
    });

    let mut walkthrough = vec![ScenarioStep::timeout("S1", "E")];
    for peer in config.iter().filter(|p| p.as_str() != "S1") {
        walkthrough.push(ScenarioStep::message(peer, "S1", "RV"));
    }
    let majority = config.len() / 2 + 1;
    for peer in config.iter().filter(|p| p.as_str() != "S1").take(majority - 1) {
        walkthrough.push(ScenarioStep::message("S1", peer, "V"));
    }

    Fixture::new(
        format!("election-{n}"),
        move || {
            names
                .iter()
                .map(|name| NodeDefinition::new(name.as_str(), Member { config: config.clone() }))
                .collect()
        },
        vec![one_leader_per_term],
        vec![Scenario {
            name: "walkthrough",
            steps: walkthrough,
        }],
    )
}
