//! The debugger backend.
//!
//! A [`Session`] owns the node links, the history tree and the id counter.
//! User commands are applied one at a time; each one either extends the tree
//! under the cursor or moves the cursor by replaying from `start`.
//!
//! Time travel restarts every node and re-sends the recorded events along the
//! path to the target. Drops and duplicates are replayed locally with their
//! recorded ids. Every replayed snapshot is compared against the stored one,
//! so a nondeterministic handler shows up as a [`EngineError::Determinism`]
//! naming the first history node that diverged.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::history::{HistoryError, HistoryId, HistoryNode, HistoryTree};
use crate::model::{
    apply_delivery, apply_drop, apply_duplicate, apply_start, Event, IdCounter, ItemId, ModelError,
    NodeId, SystemSnapshot,
};
use crate::transport::{LinkError, NodeLink};
use crate::wire::{FrontendCommand, FrontendUpdate, HistoryEntry, ShimFrame};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("item {0} is not in the current snapshot")]
    Stale(ItemId),
    #[error("item {0} is a timeout; only messages can be dropped or duplicated")]
    NotAMessage(ItemId),
    #[error("item {0} is a message, not a timeout")]
    NotATimeout(ItemId),
    #[error("node {node}: {source}")]
    Link {
        node: NodeId,
        #[source]
        source: LinkError,
    },
    #[error("no link for node {0}")]
    UnknownNode(NodeId),
    #[error("expected nodes did not register: {0:?}")]
    MissingNodes(Vec<NodeId>),
    #[error("unexpected nodes registered: {0:?}")]
    UnexpectedNodes(Vec<NodeId>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("replay diverged from the recorded history at {node}")]
    Determinism { node: HistoryId },
}

impl EngineError {
    /// Whether the session can no longer be trusted: a node misbehaved or
    /// replay diverged. Everything else is a rejected request.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            EngineError::Link { .. } | EngineError::Model(_) | EngineError::Determinism { .. }
        )
    }
}

pub type Links = BTreeMap<NodeId, Box<dyn NodeLink>>;

pub struct Session {
    links: Links,
    tree: HistoryTree,
    next_id: u64,
    last_reported: Option<HistoryId>,
    // shims may be out of step with the cursor (after a failed command)
    needs_resync: bool,
}

fn link_err(node: &NodeId) -> impl FnOnce(LinkError) -> EngineError + '_ {
    move |source| EngineError::Link {
        node: node.clone(),
        source,
    }
}

impl Session {
    /// Sends `start` to every node in name order and records the root.
    pub fn start(links: Links) -> Result<Session, EngineError> {
        let mut session = Session {
            links,
            tree: HistoryTree::new(SystemSnapshot::initial(Vec::new())),
            next_id: 0,
            last_reported: None,
            needs_resync: false,
        };
        let (root, next) = session.restart_nodes()?;
        session.tree = HistoryTree::new(root);
        session.next_id = next;
        Ok(session)
    }

    /// Like [`Session::start`], but first checks the registered names.
    pub fn start_expecting(expected: &BTreeSet<NodeId>, links: Links) -> Result<Session, EngineError> {
        let missing: Vec<NodeId> = expected.iter().filter(|n| !links.contains_key(*n)).cloned().collect();
        if !missing.is_empty() {
            return Err(EngineError::MissingNodes(missing));
        }
        let extra: Vec<NodeId> = links.keys().filter(|n| !expected.contains(*n)).cloned().collect();
        if !extra.is_empty() {
            return Err(EngineError::UnexpectedNodes(extra));
        }
        Self::start(links)
    }

    fn restart_nodes(&mut self) -> Result<(SystemSnapshot, u64), EngineError> {
        let mut snapshot = SystemSnapshot::initial(self.links.keys().cloned());
        let mut ids = IdCounter::starting_at(0);
        for (node, link) in self.links.iter_mut() {
            let response = link.send_event(&ShimFrame::Start).map_err(link_err(node))?;
            snapshot = apply_start(&snapshot, node, &response, &mut ids)?;
        }
        Ok((snapshot, ids.peek()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.links.keys()
    }

    pub fn tree(&self) -> &HistoryTree {
        &self.tree
    }

    pub fn cursor(&self) -> HistoryId {
        self.tree.cursor()
    }

    /// The displayed state: always the cursor node's snapshot.
    pub fn snapshot(&self) -> &SystemSnapshot {
        &self.cursor_node().snapshot
    }

    fn cursor_node(&self) -> &HistoryNode {
        self.tree.get(self.tree.cursor()).expect("cursor exists")
    }

    fn resync(&mut self) -> Result<(), EngineError> {
        if self.needs_resync {
            let at = self.cursor();
            self.reset_to(at)?;
        }
        Ok(())
    }

    /// Delivers a pending message or timeout, whichever `id` names.
    pub fn deliver(&mut self, id: ItemId) -> Result<HistoryId, EngineError> {
        let snap = self.snapshot();
        let event = if let Some(m) = snap.find_message(id) {
            Event::DeliverMessage { message: m.clone() }
        } else if let Some(t) = snap.find_timeout(id) {
            Event::DeliverTimeout { timeout: t.clone() }
        } else {
            return Err(EngineError::Stale(id));
        };
        self.dispatch(event)
    }

    pub fn deliver_message(&mut self, id: ItemId) -> Result<HistoryId, EngineError> {
        if self.snapshot().find_timeout(id).is_some() {
            return Err(EngineError::NotAMessage(id));
        }
        self.deliver(id)
    }

    pub fn deliver_timeout(&mut self, id: ItemId) -> Result<HistoryId, EngineError> {
        if self.snapshot().find_message(id).is_some() {
            return Err(EngineError::NotATimeout(id));
        }
        self.deliver(id)
    }

    fn event_frame(event: &Event) -> (NodeId, ShimFrame) {
        match event {
            Event::DeliverMessage { message: m } => (
                m.to.clone(),
                ShimFrame::Message {
                    from: m.from.clone(),
                    kind: m.kind.clone(),
                    body: m.body.clone(),
                },
            ),
            Event::DeliverTimeout { timeout: t } => (
                t.node.clone(),
                ShimFrame::Timeout {
                    kind: t.kind.clone(),
                    body: t.body.clone(),
                },
            ),
            _ => unreachable!("only deliveries reach a node"),
        }
    }

    /// Sends a delivery to its node and computes the successor snapshot.
    fn run_delivery(
        &mut self,
        from: &SystemSnapshot,
        event: &Event,
        ids: &mut IdCounter,
    ) -> Result<SystemSnapshot, EngineError> {
        let (node, frame) = Self::event_frame(event);
        let link = self
            .links
            .get_mut(&node)
            .ok_or_else(|| EngineError::UnknownNode(node.clone()))?;
        let response = link.send_event(&frame).map_err(link_err(&node))?;
        match apply_delivery(from, event, &response, ids) {
            Ok(next) => Ok(next),
            Err(e) => {
                // the node has already moved past `from`
                self.needs_resync = true;
                Err(e.into())
            }
        }
    }

    fn dispatch(&mut self, event: Event) -> Result<HistoryId, EngineError> {
        self.resync()?;
        let parent = self.cursor();
        let from = self.snapshot().clone();
        let base = self.next_id;
        let mut ids = IdCounter::starting_at(base);
        let next = match self.run_delivery(&from, &event, &mut ids) {
            Ok(next) => next,
            Err(e) => {
                if matches!(e, EngineError::Link { .. }) {
                    self.needs_resync = true;
                }
                return Err(e);
            }
        };
        self.next_id = ids.peek();
        Ok(self.tree.append(parent, event, next, base)?)
    }

    fn message_event(&self, id: ItemId) -> Result<crate::model::MessageEnvelope, EngineError> {
        let snap = self.snapshot();
        match snap.find_message(id) {
            Some(m) => Ok(m.clone()),
            None if snap.find_timeout(id).is_some() => Err(EngineError::NotAMessage(id)),
            None => Err(EngineError::Stale(id)),
        }
    }

    /// Removes an in-flight message. No node is contacted.
    pub fn drop_message(&mut self, id: ItemId) -> Result<HistoryId, EngineError> {
        let message = self.message_event(id)?;
        let next = apply_drop(self.snapshot(), id)?;
        let parent = self.cursor();
        Ok(self
            .tree
            .append(parent, Event::DropMessage { message }, next, self.next_id)?)
    }

    /// Copies an in-flight message under a fresh id. No node is contacted.
    pub fn duplicate_message(&mut self, id: ItemId) -> Result<HistoryId, EngineError> {
        let original = self.message_event(id)?;
        let copy_id = ItemId(self.next_id);
        let next = apply_duplicate(self.snapshot(), id, copy_id)?;
        self.next_id += 1;
        let parent = self.cursor();
        Ok(self.tree.append(
            parent,
            Event::DuplicateMessage { original, copy_id },
            next,
            copy_id.0,
        )?)
    }

    /// Moves the cursor to `target` by restarting every node and replaying the
    /// path from the root.
    pub fn reset_to(&mut self, target: HistoryId) -> Result<(), EngineError> {
        let path: Vec<HistoryNode> = self.tree.path_nodes(target)?.into_iter().cloned().collect();
        match self.replay(&path) {
            Ok(()) => {
                self.needs_resync = false;
                self.tree.set_cursor(target)?;
                Ok(())
            }
            Err(e) => {
                self.needs_resync = true;
                self.tree.set_cursor(self.tree.root())?;
                Err(e)
            }
        }
    }

    fn replay(&mut self, path: &[HistoryNode]) -> Result<(), EngineError> {
        let (root, _) = self.restart_nodes()?;
        let stored_root = &path[0];
        if root != stored_root.snapshot {
            return Err(EngineError::Determinism { node: stored_root.id });
        }
        let mut current = root;
        for step in &path[1..] {
            let next = match &step.event {
                Event::DeliverMessage { .. } | Event::DeliverTimeout { .. } => {
                    let mut ids = IdCounter::starting_at(step.id_base);
                    self.run_delivery(&current, &step.event, &mut ids)?
                }
                Event::DropMessage { message } => apply_drop(&current, message.id)?,
                Event::DuplicateMessage { original, copy_id } => {
                    apply_duplicate(&current, original.id, *copy_id)?
                }
                Event::Start => unreachable!("start only at the root"),
            };
            if next != step.snapshot {
                return Err(EngineError::Determinism { node: step.id });
            }
            current = next;
        }
        Ok(())
    }

    fn entry(node: &HistoryNode) -> HistoryEntry {
        HistoryEntry {
            id: node.id,
            parent: node.parent,
            summary: node.event.summary(),
            event: node.event.clone(),
        }
    }

    /// Snapshot, history nodes added since the previous call, and cursor.
    pub fn current_update(&mut self) -> FrontendUpdate {
        let since = self.last_reported;
        let delta: Vec<HistoryEntry> = self
            .tree
            .nodes()
            .filter(|n| since.is_none_or(|s| n.id > s))
            .map(Self::entry)
            .collect();
        if let Some(last) = delta.last() {
            self.last_reported = Some(last.id);
        }
        FrontendUpdate {
            snapshot: self.snapshot().clone(),
            history_delta: delta,
            cursor: self.cursor(),
        }
    }

    /// The whole history, for a newly connected frontend.
    pub fn full_update(&self) -> FrontendUpdate {
        FrontendUpdate {
            snapshot: self.snapshot().clone(),
            history_delta: self.tree.nodes().map(Self::entry).collect(),
            cursor: self.cursor(),
        }
    }

    /// Applies one frontend command.
    pub fn apply_command(&mut self, command: &FrontendCommand) -> Result<HistoryId, CommandError> {
        let at = match command {
            FrontendCommand::DeliverMessage { id } => self.deliver_message(*id)?,
            FrontendCommand::DeliverTimeout { id } => self.deliver_timeout(*id)?,
            FrontendCommand::DropMessage { id } => self.drop_message(*id)?,
            FrontendCommand::DuplicateMessage { id } => self.duplicate_message(*id)?,
            FrontendCommand::ResetTo { history_node_id } => {
                self.reset_to(*history_node_id)?;
                *history_node_id
            }
            FrontendCommand::LoadTrace { path } => {
                let trace = crate::trace::Trace::read_file(path)?;
                crate::trace::load_trace(&trace, self)?
            }
        };
        Ok(at)
    }
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

impl CommandError {
    pub fn is_fatal(&self) -> bool {
        match self {
            CommandError::Engine(e) => e.is_fatal(),
            CommandError::Trace(crate::trace::TraceError::Engine { source, .. }) => source.is_fatal(),
            CommandError::Trace(_) => false,
        }
    }
}
