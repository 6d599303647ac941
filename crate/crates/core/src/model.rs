//! Global state of the debugged system and the transition function.
//!
//! Everything here is a plain value. Transitions build a new
//! [`SystemSnapshot`] and never touch their input, so snapshots stored in the
//! history tree can be shared freely.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{canonical, empty_state, to_canonical, Value};

/// Name of a registered node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl PartialEq<str> for NodeId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for NodeId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Identifier of an in-flight message or a pending timeout.
///
/// Messages and timeouts draw from one session-wide counter, so an id names
/// at most one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Allocator for fresh item ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IdCounter {
    next: u64,
}

impl IdCounter {
    pub fn starting_at(next: u64) -> Self {
        IdCounter { next }
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    pub fn fresh(&mut self) -> ItemId {
        let id = ItemId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEnvelope {
    pub id: ItemId,
    pub from: NodeId,
    pub to: NodeId,
    #[serde(rename = "type")]
    pub kind: String,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutEntry {
    pub id: ItemId,
    pub node: NodeId,
    #[serde(rename = "type")]
    pub kind: String,
    pub body: Value,
}

impl TimeoutEntry {
    fn matches(&self, spec: &TimeoutSpec) -> bool {
        self.kind == spec.kind && canonical(&self.body) == canonical(&spec.body)
    }
}

/// An outgoing message as requested by a handler, before it gets an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutgoingMessage {
    pub to: NodeId,
    #[serde(rename = "type")]
    pub kind: String,
    pub body: Value,
}

/// A timeout as named by a handler: `(type, body)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutSpec {
    #[serde(rename = "type")]
    pub kind: String,
    pub body: Value,
}

impl TimeoutSpec {
    pub fn new(kind: impl Into<String>, body: Value) -> Self {
        TimeoutSpec {
            kind: kind.into(),
            body,
        }
    }
}

/// What a node reports after handling one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandlerResponse {
    /// Complete post-event local state.
    pub state: Value,
    pub messages: Vec<OutgoingMessage>,
    pub timeouts_set: Vec<TimeoutSpec>,
    pub timeouts_cleared: Vec<TimeoutSpec>,
}

impl HandlerResponse {
    pub fn with_state(state: Value) -> Self {
        HandlerResponse {
            state,
            messages: Vec::new(),
            timeouts_set: Vec::new(),
            timeouts_cleared: Vec::new(),
        }
    }
}

/// Undelivered messages and pending timeouts of one node, in arrival order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Inbox {
    pub messages: Vec<MessageEnvelope>,
    pub timeouts: Vec<TimeoutEntry>,
}

impl Inbox {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty() && self.timeouts.is_empty()
    }
}

/// One atom of history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Event {
    Start,
    DeliverMessage {
        message: MessageEnvelope,
    },
    DeliverTimeout {
        timeout: TimeoutEntry,
    },
    DropMessage {
        message: MessageEnvelope,
    },
    DuplicateMessage {
        original: MessageEnvelope,
        #[serde(rename = "copyId")]
        copy_id: ItemId,
    },
}

impl Event {
    /// Node whose lane or inbox the event acts on.
    pub fn target(&self) -> Option<&NodeId> {
        match self {
            Event::Start => None,
            Event::DeliverMessage { message }
            | Event::DropMessage { message }
            | Event::DuplicateMessage {
                original: message, ..
            } => Some(&message.to),
            Event::DeliverTimeout { timeout } => Some(&timeout.node),
        }
    }

    /// Short human-readable description for history views.
    pub fn summary(&self) -> String {
        match self {
            Event::Start => "start".to_owned(),
            Event::DeliverMessage { message: m } => {
                format!("deliver {} {}->{}", m.kind, m.from, m.to)
            }
            Event::DeliverTimeout { timeout: t } => format!("timeout {} @{}", t.kind, t.node),
            Event::DropMessage { message: m } => format!("drop {} {}->{}", m.kind, m.from, m.to),
            Event::DuplicateMessage { original: m, .. } => {
                format!("duplicate {} {}->{}", m.kind, m.from, m.to)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("item {id} is not in the inbox of {node}")]
    NotInInbox { node: NodeId, id: ItemId },
    #[error("node {0} is not registered")]
    UnregisteredNode(NodeId),
    #[error("no in-flight message {0}")]
    UnknownMessage(ItemId),
    #[error("id {0} is already in use")]
    IdCollision(ItemId),
    #[error("event is not a delivery")]
    NotADelivery,
}

/// Global state at one point in history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSnapshot {
    pub states: BTreeMap<NodeId, Value>,
    pub inboxes: BTreeMap<NodeId, Inbox>,
}

impl SystemSnapshot {
    /// Every node with empty state and an empty inbox.
    pub fn initial<I>(nodes: I) -> Self
    where
        I: IntoIterator<Item = NodeId>,
    {
        let mut states = BTreeMap::new();
        let mut inboxes = BTreeMap::new();
        for node in nodes {
            states.insert(node.clone(), empty_state());
            inboxes.insert(node, Inbox::default());
        }
        SystemSnapshot { states, inboxes }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.states.keys()
    }

    pub fn state(&self, node: &str) -> Option<&Value> {
        self.states.get(&NodeId::from(node))
    }

    pub fn inbox(&self, node: &str) -> Option<&Inbox> {
        self.inboxes.get(&NodeId::from(node))
    }

    pub fn find_message(&self, id: ItemId) -> Option<&MessageEnvelope> {
        self.inboxes
            .values()
            .flat_map(|inbox| inbox.messages.iter())
            .find(|m| m.id == id)
    }

    pub fn find_timeout(&self, id: ItemId) -> Option<&TimeoutEntry> {
        self.inboxes
            .values()
            .flat_map(|inbox| inbox.timeouts.iter())
            .find(|t| t.id == id)
    }

    fn id_in_use(&self, id: ItemId) -> bool {
        self.find_message(id).is_some() || self.find_timeout(id).is_some()
    }

    pub fn messages(&self) -> impl Iterator<Item = &MessageEnvelope> {
        self.inboxes.values().flat_map(|inbox| inbox.messages.iter())
    }

    pub fn timeouts(&self) -> impl Iterator<Item = &TimeoutEntry> {
        self.inboxes.values().flat_map(|inbox| inbox.timeouts.iter())
    }

    /// Canonical serialization; equal snapshots give equal bytes.
    pub fn canonical(&self) -> String {
        to_canonical(self).expect("snapshot is always serializable")
    }

    /// Canonical form with item ids erased and inbox contents sorted.
    ///
    /// Two snapshots with the same key have the same node states and the
    /// same multiset of pending items, hence the same futures.
    pub fn shape_key(&self) -> String {
        let mut out = String::new();
        for (node, state) in &self.states {
            out.push_str(&canonical(&Value::String(node.to_string())));
            out.push('=');
            out.push_str(&canonical(state));
            let inbox = &self.inboxes[node];
            let mut messages: Vec<String> = inbox
                .messages
                .iter()
                .map(|m| {
                    canonical(&serde_json::json!([m.from.as_str(), m.kind.as_str(), m.body]))
                })
                .collect();
            messages.sort();
            let mut timeouts: Vec<String> = inbox
                .timeouts
                .iter()
                .map(|t| canonical(&serde_json::json!([t.kind.as_str(), t.body])))
                .collect();
            timeouts.sort();
            out.push_str(&format!("|m{}|t{};", messages.join(","), timeouts.join(",")));
        }
        out
    }

    fn apply_effects(
        &mut self,
        node: &NodeId,
        response: &HandlerResponse,
        ids: &mut IdCounter,
    ) -> Result<(), ModelError> {
        if !self.states.contains_key(node) {
            return Err(ModelError::UnregisteredNode(node.clone()));
        }
        if let Some(bad) = response
            .messages
            .iter()
            .find(|m| !self.inboxes.contains_key(&m.to))
        {
            return Err(ModelError::UnregisteredNode(bad.to.clone()));
        }

        self.states.insert(node.clone(), response.state.clone());

        let inbox = self.inboxes.get_mut(node).expect("key sets agree");
        // clears first, then sets
        for cleared in &response.timeouts_cleared {
            inbox.timeouts.retain(|t| !t.matches(cleared));
        }
        for set in &response.timeouts_set {
            inbox.timeouts.push(TimeoutEntry {
                id: ids.fresh(),
                node: node.clone(),
                kind: set.kind.clone(),
                body: set.body.clone(),
            });
        }
        for out in &response.messages {
            let envelope = MessageEnvelope {
                id: ids.fresh(),
                from: node.clone(),
                to: out.to.clone(),
                kind: out.kind.clone(),
                body: out.body.clone(),
            };
            self.inboxes
                .get_mut(&out.to)
                .expect("checked above")
                .messages
                .push(envelope);
        }
        Ok(())
    }
}

/// Applies a node's response to `start`: nothing is consumed from its inbox.
pub fn apply_start(
    snapshot: &SystemSnapshot,
    node: &NodeId,
    response: &HandlerResponse,
    ids: &mut IdCounter,
) -> Result<SystemSnapshot, ModelError> {
    let mut next = snapshot.clone();
    next.apply_effects(node, response, ids)?;
    Ok(next)
}

/// Applies a message or timeout delivery together with the handler's response.
///
/// Order: remove the delivered item, clear timeouts, set timeouts, enqueue
/// outgoing messages.
pub fn apply_delivery(
    snapshot: &SystemSnapshot,
    event: &Event,
    response: &HandlerResponse,
    ids: &mut IdCounter,
) -> Result<SystemSnapshot, ModelError> {
    let mut next = snapshot.clone();
    let node = match event {
        Event::DeliverMessage { message } => {
            let inbox = next
                .inboxes
                .get_mut(&message.to)
                .ok_or_else(|| ModelError::UnregisteredNode(message.to.clone()))?;
            let pos = inbox
                .messages
                .iter()
                .position(|m| m.id == message.id)
                .ok_or_else(|| ModelError::NotInInbox {
                    node: message.to.clone(),
                    id: message.id,
                })?;
            inbox.messages.remove(pos);
            message.to.clone()
        }
        Event::DeliverTimeout { timeout } => {
            let inbox = next
                .inboxes
                .get_mut(&timeout.node)
                .ok_or_else(|| ModelError::UnregisteredNode(timeout.node.clone()))?;
            let pos = inbox
                .timeouts
                .iter()
                .position(|t| t.id == timeout.id)
                .ok_or_else(|| ModelError::NotInInbox {
                    node: timeout.node.clone(),
                    id: timeout.id,
                })?;
            inbox.timeouts.remove(pos);
            timeout.node.clone()
        }
        _ => return Err(ModelError::NotADelivery),
    };
    next.apply_effects(&node, response, ids)?;
    Ok(next)
}

/// Removes an in-flight message without running any handler.
pub fn apply_drop(snapshot: &SystemSnapshot, id: ItemId) -> Result<SystemSnapshot, ModelError> {
    let mut next = snapshot.clone();
    for inbox in next.inboxes.values_mut() {
        if let Some(pos) = inbox.messages.iter().position(|m| m.id == id) {
            inbox.messages.remove(pos);
            return Ok(next);
        }
    }
    Err(ModelError::UnknownMessage(id))
}

/// Appends a copy of an in-flight message, under `fresh`, to the same inbox.
pub fn apply_duplicate(
    snapshot: &SystemSnapshot,
    id: ItemId,
    fresh: ItemId,
) -> Result<SystemSnapshot, ModelError> {
    if snapshot.id_in_use(fresh) {
        return Err(ModelError::IdCollision(fresh));
    }
    let original = snapshot
        .find_message(id)
        .ok_or(ModelError::UnknownMessage(id))?
        .clone();
    let mut next = snapshot.clone();
    let copy = MessageEnvelope {
        id: fresh,
        ..original.clone()
    };
    next.inboxes
        .get_mut(&original.to)
        .expect("message lives in a registered inbox")
        .messages
        .push(copy);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn two_nodes() -> SystemSnapshot {
        SystemSnapshot::initial(["A".into(), "B".into()])
    }

    fn push_msg(s: &mut SystemSnapshot, id: u64, from: &str, to: &str, kind: &str) {
        s.inboxes.get_mut(&NodeId::from(to)).unwrap().messages.push(MessageEnvelope {
            id: ItemId(id),
            from: from.into(),
            to: to.into(),
            kind: kind.into(),
            body: json!({"k": id}),
        });
    }

    fn push_timeout(s: &mut SystemSnapshot, id: u64, node: &str, kind: &str, body: Value) {
        s.inboxes.get_mut(&NodeId::from(node)).unwrap().timeouts.push(TimeoutEntry {
            id: ItemId(id),
            node: node.into(),
            kind: kind.into(),
            body,
        });
    }

    #[test]
    fn empty_response_only_removes_the_timeout() {
        let mut s = two_nodes();
        push_timeout(&mut s, 1, "A", "T", json!({}));
        push_msg(&mut s, 2, "A", "B", "x");
        let t = s.find_timeout(ItemId(1)).unwrap().clone();
        let resp = HandlerResponse::with_state(json!({"s": 1}));
        let mut ids = IdCounter::starting_at(10);
        let next = apply_delivery(&s, &Event::DeliverTimeout { timeout: t }, &resp, &mut ids).unwrap();
        assert!(next.inbox("A").unwrap().timeouts.is_empty());
        assert_eq!(next.state("A"), Some(&json!({"s": 1})));
        assert_eq!(next.inbox("B"), s.inbox("B"));
        assert_eq!(next.state("B"), s.state("B"));
        assert_eq!(ids.peek(), 10);
        // input untouched
        assert_eq!(s.inbox("A").unwrap().timeouts.len(), 1);
    }

    #[test]
    fn stale_delivery_is_rejected() {
        let s = two_nodes();
        let ghost = MessageEnvelope {
            id: ItemId(7),
            from: "A".into(),
            to: "B".into(),
            kind: "x".into(),
            body: json!(null),
        };
        let err = apply_delivery(
            &s,
            &Event::DeliverMessage { message: ghost },
            &HandlerResponse::with_state(json!({})),
            &mut IdCounter::default(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::NotInInbox { node: "B".into(), id: ItemId(7) });
    }

    #[test]
    fn send_to_unregistered_node_is_rejected() {
        let mut s = two_nodes();
        push_timeout(&mut s, 1, "A", "T", json!({}));
        let t = s.find_timeout(ItemId(1)).unwrap().clone();
        let mut resp = HandlerResponse::with_state(json!({}));
        resp.messages.push(OutgoingMessage { to: "Z".into(), kind: "x".into(), body: json!(1) });
        let err = apply_delivery(&s, &Event::DeliverTimeout { timeout: t }, &resp, &mut IdCounter::default())
            .unwrap_err();
        assert_eq!(err, ModelError::UnregisteredNode("Z".into()));
    }

    #[test]
    fn self_send_lands_in_own_inbox() {
        let s = two_nodes();
        let mut resp = HandlerResponse::with_state(json!({}));
        resp.messages.push(OutgoingMessage { to: "A".into(), kind: "loop".into(), body: json!(0) });
        let next = apply_start(&s, &"A".into(), &resp, &mut IdCounter::default()).unwrap();
        assert_eq!(next.inbox("A").unwrap().messages.len(), 1);
        assert_eq!(next.inbox("A").unwrap().messages[0].from, "A");
    }

    #[test]
    fn clear_before_set_leaves_one_timeout() {
        let mut s = two_nodes();
        push_timeout(&mut s, 1, "A", "E", json!({"t": 1}));
        push_timeout(&mut s, 2, "A", "E", json!({"t": 1}));
        push_timeout(&mut s, 3, "A", "E", json!({"t": 2}));
        let mut resp = HandlerResponse::with_state(json!({}));
        resp.timeouts_cleared.push(TimeoutSpec::new("E", json!({"t": 1})));
        resp.timeouts_set.push(TimeoutSpec::new("E", json!({"t": 1})));
        let next = apply_start(&s, &"A".into(), &resp, &mut IdCounter::starting_at(9)).unwrap();
        let pending: Vec<_> = next.inbox("A").unwrap().timeouts.iter().map(|t| (t.id.0, t.body.clone())).collect();
        assert_eq!(pending, vec![(3, json!({"t": 2})), (9, json!({"t": 1}))]);
    }

    #[test]
    fn identical_timeouts_are_a_multiset() {
        let s = two_nodes();
        let mut resp = HandlerResponse::with_state(json!({}));
        resp.timeouts_set.push(TimeoutSpec::new("E", json!({})));
        resp.timeouts_set.push(TimeoutSpec::new("E", json!({})));
        let next = apply_start(&s, &"A".into(), &resp, &mut IdCounter::default()).unwrap();
        assert_eq!(next.inbox("A").unwrap().timeouts.len(), 2);
    }

    #[test]
    fn drop_single_message() {
        let mut s = two_nodes();
        push_msg(&mut s, 1, "A", "B", "m");
        let next = apply_drop(&s, ItemId(1)).unwrap();
        assert!(next.inbox("B").unwrap().is_empty());
        assert_eq!(next.states, s.states);
    }

    #[test]
    fn drop_preserves_order_of_the_rest() {
        let mut s = two_nodes();
        push_msg(&mut s, 1, "A", "B", "m1");
        push_msg(&mut s, 2, "A", "B", "m2");
        push_msg(&mut s, 3, "A", "B", "m3");
        let next = apply_drop(&s, ItemId(1)).unwrap();
        let ids: Vec<u64> = next.inbox("B").unwrap().messages.iter().map(|m| m.id.0).collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(apply_drop(&s, ItemId(99)).unwrap_err(), ModelError::UnknownMessage(ItemId(99)));
    }

    #[test]
    fn duplicate_appends_copy_with_fresh_id() {
        let mut s = two_nodes();
        push_msg(&mut s, 1, "A", "B", "m1");
        let once = apply_duplicate(&s, ItemId(1), ItemId(5)).unwrap();
        let msgs = &once.inbox("B").unwrap().messages;
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[1].id, ItemId(5));
        assert_eq!(msgs[1].body, msgs[0].body);
        assert_eq!(msgs[1].kind, msgs[0].kind);
        assert_eq!(msgs[1].from, msgs[0].from);

        let twice = apply_duplicate(&once, ItemId(1), ItemId(6)).unwrap();
        let msgs = &twice.inbox("B").unwrap().messages;
        let mut ids: Vec<u64> = msgs.iter().map(|m| m.id.0).collect();
        ids.dedup();
        assert_eq!(ids.len(), 3);
        assert!(msgs.iter().all(|m| m.body == msgs[0].body));
    }

    #[test]
    fn duplicate_errors() {
        let mut s = two_nodes();
        push_msg(&mut s, 1, "A", "B", "m1");
        assert_eq!(apply_duplicate(&s, ItemId(1), ItemId(1)).unwrap_err(), ModelError::IdCollision(ItemId(1)));
        assert_eq!(apply_duplicate(&s, ItemId(4), ItemId(5)).unwrap_err(), ModelError::UnknownMessage(ItemId(4)));
    }

    #[test]
    fn shape_key_ignores_ids_and_arrival_order() {
        let mut a = two_nodes();
        push_msg(&mut a, 1, "A", "B", "x");
        push_msg(&mut a, 2, "A", "B", "y");
        let mut b = two_nodes();
        push_msg(&mut b, 8, "A", "B", "y");
        b.inboxes.get_mut(&NodeId::from("B")).unwrap().messages[0].body = json!({"k": 2});
        push_msg(&mut b, 1, "A", "B", "x");
        assert_ne!(a.canonical(), b.canonical());
        assert_eq!(a.shape_key(), b.shape_key());
    }

    // Random responses applied to random deliveries; checks conservation,
    // locality and purity.
    fn arb_response(nodes: Vec<&'static str>) -> impl Strategy<Value = HandlerResponse> {
        let n = nodes.clone();
        let msg = (0..n.len(), "[a-c]", 0i64..3).prop_map(move |(i, k, b)| OutgoingMessage {
            to: n[i].into(),
            kind: k,
            body: json!(b),
        });
        let spec = ("[EF]", 0i64..2).prop_map(|(k, b)| TimeoutSpec::new(k, json!(b)));
        (
            0i64..4,
            prop::collection::vec(msg, 0..3),
            prop::collection::vec(spec.clone(), 0..2),
            prop::collection::vec(spec, 0..2),
        )
            .prop_map(|(st, messages, set, cleared)| HandlerResponse {
                state: json!({"v": st}),
                messages,
                timeouts_set: set,
                timeouts_cleared: cleared,
            })
    }

    proptest! {
        #[test]
        fn transitions_conserve_and_localize(
            responses in prop::collection::vec((any::<prop::sample::Index>(), arb_response(vec!["A", "B", "C"])), 1..12)
        ) {
            let nodes: Vec<NodeId> = vec!["A".into(), "B".into(), "C".into()];
            let mut ids = IdCounter::default();
            let mut resp0 = HandlerResponse::with_state(json!({}));
            resp0.timeouts_set.push(TimeoutSpec::new("E", json!(0)));
            resp0.messages.push(OutgoingMessage { to: "B".into(), kind: "a".into(), body: json!(0) });
            let mut snap = apply_start(&SystemSnapshot::initial(nodes.clone()), &nodes[0], &resp0, &mut ids).unwrap();

            for (pick, resp) in responses {
                let mut items: Vec<Event> = snap.messages().cloned().map(|m| Event::DeliverMessage { message: m }).collect();
                items.extend(snap.timeouts().cloned().map(|t| Event::DeliverTimeout { timeout: t }));
                if items.is_empty() { break; }
                let event = pick.get(&items).clone();

                let mut ids_a = ids;
                let mut ids_b = ids;
                let next = apply_delivery(&snap, &event, &resp, &mut ids_a).unwrap();
                let again = apply_delivery(&snap, &event, &resp, &mut ids_b).unwrap();
                prop_assert_eq!(next.canonical(), again.canonical());

                let delivered = match &event {
                    Event::DeliverMessage { message } => message.id,
                    Event::DeliverTimeout { timeout } => timeout.id,
                    _ => unreachable!(),
                };
                let before: Vec<ItemId> = snap.messages().map(|m| m.id).collect();
                let after: Vec<ItemId> = next.messages().map(|m| m.id).collect();
                for id in &before {
                    if *id != delivered {
                        prop_assert!(after.contains(id));
                    }
                }
                let new_ones: Vec<&MessageEnvelope> = next.messages().filter(|m| !before.contains(&m.id)).collect();
                prop_assert_eq!(new_ones.len(), resp.messages.len());
                for (node, inbox) in &next.inboxes {
                    for m in &inbox.messages {
                        prop_assert_eq!(&m.to, node);
                    }
                    for t in &inbox.timeouts {
                        prop_assert_eq!(&t.node, node);
                    }
                }
                prop_assert_eq!(next.states.keys().collect::<Vec<_>>(), next.inboxes.keys().collect::<Vec<_>>());
                ids = ids_a;
                snap = next;
            }
        }
    }
}
