//! Bounded exhaustive exploration of event orderings.
//!
//! Depth-first over every deliverable item (and optionally every drop and
//! duplicate) from the root, backtracking with [`Session::reset_to`]. The
//! first snapshot that violates the invariant is returned as a [`Trace`].
//!
//! With `dedup` on, snapshots are keyed by [`SystemSnapshot::shape_key`] and a
//! state is skipped only when it was already expanded at the same or a
//! shallower depth, so pruning never hides a state reachable within the
//! bound. Invariants are expected to ignore item ids and inbox order.

use std::collections::{BTreeSet, HashMap};

use crate::engine::{EngineError, Session};
use crate::history::HistoryId;
use crate::model::{ItemId, SystemSnapshot};
use crate::trace::Trace;

/// A named, pure predicate over snapshots. `true` means the property holds.
pub struct InvariantPredicate {
    pub name: String,
    check: Box<dyn Fn(&SystemSnapshot) -> bool + Send + Sync>,
}

impl InvariantPredicate {
    pub fn new(name: impl Into<String>, check: impl Fn(&SystemSnapshot) -> bool + Send + Sync + 'static) -> Self {
        InvariantPredicate {
            name: name.into(),
            check: Box::new(check),
        }
    }

    pub fn holds(&self, snapshot: &SystemSnapshot) -> bool {
        (self.check)(snapshot)
    }
}

impl std::fmt::Debug for InvariantPredicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvariantPredicate").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreOptions {
    pub max_depth: usize,
    pub allow_drop_dup: bool,
    pub dedup: bool,
    /// Keep the shape of every visited snapshot in the report.
    pub record_visited: bool,
}

impl ExploreOptions {
    pub fn depth(max_depth: usize) -> Self {
        ExploreOptions {
            max_depth,
            allow_drop_dup: false,
            dedup: false,
            record_visited: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct ExploreReport {
    pub counterexample: Option<Trace>,
    /// The history node where the violation was found.
    pub violation_at: Option<HistoryId>,
    pub states_visited: usize,
    pub visited_shapes: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy)]
enum Choice {
    Deliver(ItemId),
    Drop(ItemId),
    Duplicate(ItemId),
}

fn choices(snapshot: &SystemSnapshot, allow_drop_dup: bool) -> Vec<Choice> {
    let mut out = Vec::new();
    for inbox in snapshot.inboxes.values() {
        for m in &inbox.messages {
            out.push(Choice::Deliver(m.id));
            if allow_drop_dup {
                out.push(Choice::Drop(m.id));
                out.push(Choice::Duplicate(m.id));
            }
        }
        for t in &inbox.timeouts {
            out.push(Choice::Deliver(t.id));
        }
    }
    out
}

struct Search<'a> {
    session: &'a mut Session,
    invariant: &'a InvariantPredicate,
    options: ExploreOptions,
    best_depth: HashMap<String, usize>,
    report: ExploreReport,
}

impl Search<'_> {
    fn visit(&mut self, at: HistoryId, depth: usize) -> Result<Option<HistoryId>, EngineError> {
        if self.session.cursor() != at {
            self.session.reset_to(at)?;
        }
        let snapshot = self.session.snapshot().clone();
        self.report.states_visited += 1;
        if self.options.record_visited {
            self.report.visited_shapes.insert(snapshot.shape_key());
        }
        if !self.invariant.holds(&snapshot) {
            return Ok(Some(at));
        }
        if depth == self.options.max_depth {
            return Ok(None);
        }
        if self.options.dedup {
            let key = snapshot.shape_key();
            match self.best_depth.get(&key) {
                Some(&seen) if seen <= depth => return Ok(None),
                _ => {
                    self.best_depth.insert(key, depth);
                }
            }
        }
        for choice in choices(&snapshot, self.options.allow_drop_dup) {
            if self.session.cursor() != at {
                self.session.reset_to(at)?;
            }
            let child = match choice {
                Choice::Deliver(id) => self.session.deliver(id)?,
                Choice::Drop(id) => self.session.drop_message(id)?,
                Choice::Duplicate(id) => self.session.duplicate_message(id)?,
            };
            if let Some(found) = self.visit(child, depth + 1)? {
                return Ok(Some(found));
            }
        }
        Ok(None)
    }
}

/// Explores from the root of `session`.
pub fn explore_session(
    session: &mut Session,
    invariant: &InvariantPredicate,
    options: ExploreOptions,
) -> Result<ExploreReport, EngineError> {
    let root = session.tree().root();
    let mut search = Search {
        session,
        invariant,
        options,
        best_depth: HashMap::new(),
        report: ExploreReport::default(),
    };
    let found = search.visit(root, 0)?;
    let mut report = search.report;
    if let Some(at) = found {
        report.counterexample = Some(Trace::from_history(session.tree(), at)?);
        report.violation_at = Some(at);
    }
    Ok(report)
}

/// Builds a session with `factory` and searches it up to `max_depth` events;
/// deliveries only, no pruning.
pub fn explore<F>(factory: F, invariant: &InvariantPredicate, max_depth: usize) -> Result<Option<Trace>, EngineError>
where
    F: FnOnce() -> Result<Session, EngineError>,
{
    let mut session = factory()?;
    Ok(explore_session(&mut session, invariant, ExploreOptions::depth(max_depth))?.counterexample)
}
