//! Branching execution history.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Event, SystemSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HistoryId(pub u64);

impl fmt::Display for HistoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("unknown history node {0}")]
    UnknownNode(HistoryId),
    #[error("start may only appear at the root")]
    StartNotAtRoot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryNode {
    pub id: HistoryId,
    pub parent: Option<HistoryId>,
    pub event: Event,
    pub snapshot: SystemSnapshot,
    /// First item id this event allocated; replays re-seed the counter here.
    pub id_base: u64,
}

/// Tree of explored executions rooted at `start`, with a cursor on the
/// currently displayed state.
#[derive(Debug, Clone)]
pub struct HistoryTree {
    nodes: BTreeMap<HistoryId, HistoryNode>,
    children: BTreeMap<HistoryId, Vec<HistoryId>>,
    root: HistoryId,
    cursor: HistoryId,
    next: u64,
}

impl HistoryTree {
    pub fn new(root_snapshot: SystemSnapshot) -> Self {
        let root = HistoryId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            HistoryNode {
                id: root,
                parent: None,
                event: Event::Start,
                snapshot: root_snapshot,
                id_base: 0,
            },
        );
        HistoryTree {
            nodes,
            children: BTreeMap::new(),
            root,
            cursor: root,
            next: 1,
        }
    }

    pub fn root(&self) -> HistoryId {
        self.root
    }

    pub fn cursor(&self) -> HistoryId {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: HistoryId) -> Result<&HistoryNode, HistoryError> {
        self.nodes.get(&id).ok_or(HistoryError::UnknownNode(id))
    }

    pub fn contains(&self, id: HistoryId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &HistoryNode> {
        self.nodes.values()
    }

    pub fn children(&self, id: HistoryId) -> &[HistoryId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn set_cursor(&mut self, id: HistoryId) -> Result<(), HistoryError> {
        self.get(id)?;
        self.cursor = id;
        Ok(())
    }

    /// Adds `event` as a child of `parent` and moves the cursor to it.
    pub fn append(
        &mut self,
        parent: HistoryId,
        event: Event,
        snapshot: SystemSnapshot,
        id_base: u64,
    ) -> Result<HistoryId, HistoryError> {
        self.get(parent)?;
        if event == Event::Start {
            return Err(HistoryError::StartNotAtRoot);
        }
        let id = HistoryId(self.next);
        self.next += 1;
        self.nodes.insert(
            id,
            HistoryNode {
                id,
                parent: Some(parent),
                event,
                snapshot,
                id_base,
            },
        );
        self.children.entry(parent).or_default().push(id);
        self.cursor = id;
        Ok(id)
    }

    /// Nodes from the root to `id` inclusive.
    pub fn path_nodes(&self, id: HistoryId) -> Result<Vec<&HistoryNode>, HistoryError> {
        let mut path = Vec::new();
        let mut current = Some(id);
        while let Some(at) = current {
            let node = self.get(at)?;
            path.push(node);
            current = node.parent;
        }
        path.reverse();
        Ok(path)
    }

    /// Events from the root (`Start` first) to `id` inclusive.
    pub fn path_to_root(&self, id: HistoryId) -> Result<Vec<Event>, HistoryError> {
        Ok(self
            .path_nodes(id)?
            .into_iter()
            .map(|n| n.event.clone())
            .collect())
    }

    /// Number of events after `start` on the path to `id`.
    pub fn depth(&self, id: HistoryId) -> Result<usize, HistoryError> {
        Ok(self.path_nodes(id)?.len() - 1)
    }
}
