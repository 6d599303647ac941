//! Small deterministic systems used as examples and as the test corpus.

mod echo;
mod election;
mod lamport;

use std::sync::Arc;

pub use echo::fixture_echo;
pub use election::fixture_toy_election;
pub use lamport::fixture_lamport_mutex;

use crate::engine::{EngineError, Links, Session};
use crate::explore::InvariantPredicate;
use crate::history::HistoryId;
use crate::model::{ItemId, NodeId, SystemSnapshot};
use crate::shim::{InProcessNode, NodeDefinition};
use crate::transport::NodeLink;

/// One scripted user action, resolved against the current snapshot by
/// taking the first matching item.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioStep {
    DeliverTimeout { node: NodeId, kind: String },
    DeliverMessage { to: NodeId, from: NodeId, kind: String },
    Drop { to: NodeId, from: NodeId, kind: String },
    Duplicate { to: NodeId, from: NodeId, kind: String },
}

impl ScenarioStep {
    pub fn timeout(node: &str, kind: &str) -> Self {
        ScenarioStep::DeliverTimeout { node: node.into(), kind: kind.into() }
    }

    pub fn message(to: &str, from: &str, kind: &str) -> Self {
        ScenarioStep::DeliverMessage { to: to.into(), from: from.into(), kind: kind.into() }
    }

    pub fn drop(to: &str, from: &str, kind: &str) -> Self {
        ScenarioStep::Drop { to: to.into(), from: from.into(), kind: kind.into() }
    }

    pub fn duplicate(to: &str, from: &str, kind: &str) -> Self {
        ScenarioStep::Duplicate { to: to.into(), from: from.into(), kind: kind.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub steps: Vec<ScenarioStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("step {step}: nothing matches {wanted:?}")]
    NoMatch { step: usize, wanted: ScenarioStep },
    #[error("step {step}: {source}")]
    Engine {
        step: usize,
        #[source]
        source: EngineError,
    },
}

type DefinitionFactory = Arc<dyn Fn() -> Vec<NodeDefinition> + Send + Sync>;

pub struct Fixture {
    pub name: String,
    make: DefinitionFactory,
    pub invariants: Vec<InvariantPredicate>,
    pub scenarios: Vec<Scenario>,
}

impl Fixture {
    fn new(
        name: impl Into<String>,
        make: impl Fn() -> Vec<NodeDefinition> + Send + Sync + 'static,
        invariants: Vec<InvariantPredicate>,
        scenarios: Vec<Scenario>,
    ) -> Self {
        Fixture {
            name: name.into(),
            make: Arc::new(make),
            invariants,
            scenarios,
        }
    }

    /// Fresh node definitions, each with its own handler instance.
    pub fn definitions(&self) -> Vec<NodeDefinition> {
        (self.make)()
    }

    pub fn node_names(&self) -> Vec<NodeId> {
        self.definitions().into_iter().map(|d| d.name).collect()
    }

    /// Links to in-process instances of every node.
    pub fn links(&self) -> Links {
        self.definitions()
            .into_iter()
            .map(|d| (d.name.clone(), Box::new(InProcessNode::new(d)) as Box<dyn NodeLink>))
            .collect()
    }

    /// A started session over in-process nodes.
    pub fn session(&self) -> Result<Session, EngineError> {
        Session::start(self.links())
    }

    pub fn invariant(&self, name: &str) -> Option<&InvariantPredicate> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn scenario(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    /// Names of the invariants violated by `snapshot`.
    pub fn violations(&self, snapshot: &SystemSnapshot) -> Vec<&str> {
        self.invariants
            .iter()
            .filter(|i| !i.holds(snapshot))
            .map(|i| i.name.as_str())
            .collect()
    }
}

fn find_message(snapshot: &SystemSnapshot, to: &NodeId, from: &NodeId, kind: &str) -> Option<ItemId> {
    snapshot
        .inboxes
        .get(to)?
        .messages
        .iter()
        .find(|m| &m.from == from && m.kind == kind)
        .map(|m| m.id)
}

/// Plays `scenario` from the cursor; returns the history node of every step.
pub fn run_scenario(session: &mut Session, scenario: &Scenario) -> Result<Vec<HistoryId>, ScenarioError> {
    let mut visited = Vec::new();
    for (i, step) in scenario.steps.iter().enumerate() {
        let n = i + 1;
        let snapshot = session.snapshot();
        let no_match = || ScenarioError::NoMatch { step: n, wanted: step.clone() };
        let result = match step {
            ScenarioStep::DeliverTimeout { node, kind } => {
                let id = snapshot
                    .inboxes
                    .get(node)
                    .and_then(|inbox| inbox.timeouts.iter().find(|t| &t.kind == kind))
                    .map(|t| t.id)
                    .ok_or_else(no_match)?;
                session.deliver_timeout(id)
            }
            ScenarioStep::DeliverMessage { to, from, kind } => {
                let id = find_message(snapshot, to, from, kind).ok_or_else(no_match)?;
                session.deliver_message(id)
            }
            ScenarioStep::Drop { to, from, kind } => {
                let id = find_message(snapshot, to, from, kind).ok_or_else(no_match)?;
                session.drop_message(id)
            }
            ScenarioStep::Duplicate { to, from, kind } => {
                let id = find_message(snapshot, to, from, kind).ok_or_else(no_match)?;
                session.duplicate_message(id)
            }
        };
        visited.push(result.map_err(|source| ScenarioError::Engine { step: n, source })?);
    }
    Ok(visited)
}

/// Every built-in fixture by name, at its default size.
pub fn by_name(name: &str) -> Option<Fixture> {
    match name {
        "echo" => Some(fixture_echo()),
        "election" => Some(fixture_toy_election(5)),
        "election3" => Some(fixture_toy_election(3)),
        "lamport" => Some(fixture_lamport_mutex(3, false)),
        "lamport-broken" => Some(fixture_lamport_mutex(3, true)),
        _ => None,
    }
}

pub const FIXTURE_NAMES: &[&str] = &["echo", "election", "election3", "lamport", "lamport-broken"];
