//! Space-time diagrams in Graphviz DOT.
//!
//! One vertical lane per node, one anchor vertex per event on the node it
//! happened at, and one arrow per message from the anchor of the event that
//! sent it to the anchor of its delivery. Vertex names encode step indices
//! (`n<lane>_s<step>`), so output is stable for a given history path.
//!
//! Edge classes: `lane` links consecutive anchors of a node; `message` is a
//! delivered message; `drop` ends at a `✕` vertex; `pending` marks a message
//! still in flight at the end of the path.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::history::{HistoryError, HistoryId, HistoryTree};
use crate::model::{Event, ItemId, NodeId};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders the path from the root to `leaf`.
pub fn to_dot(tree: &HistoryTree, leaf: HistoryId) -> Result<String, HistoryError> {
    let path = tree.path_nodes(leaf)?;
    let lanes: Vec<NodeId> = path[0].snapshot.nodes().cloned().collect();
    let lane_of: HashMap<&NodeId, usize> = lanes.iter().enumerate().map(|(i, n)| (n, i)).collect();

    let mut vertices = String::new();
    let mut edges = String::new();
    let mut lane_anchors: Vec<Vec<String>> = vec![Vec::new(); lanes.len()];
    let mut send_anchor: HashMap<ItemId, String> = HashMap::new();

    for (lane, node) in lanes.iter().enumerate() {
        let name = format!("n{lane}_s0");
        let _ = writeln!(vertices, "  {name} [label={}, shape=box];", quote(node.as_str()));
        lane_anchors[lane].push(name);
    }
    // messages sent by `start` hang off the lane heads
    for m in path[0].snapshot.messages() {
        send_anchor.insert(m.id, format!("n{}_s0", lane_of[&m.from]));
    }

    for (step, pair) in path.windows(2).enumerate() {
        let step = step + 1;
        let (parent, node) = (&pair[0].snapshot, &pair[1]);
        let before: BTreeSet<ItemId> = parent.messages().map(|m| m.id).collect();
        match &node.event {
            Event::DeliverMessage { message } => {
                let lane = lane_of[&message.to];
                let anchor = format!("n{lane}_s{step}");
                let _ = writeln!(vertices, "  {anchor} [label=\"\", shape=point];");
                if let Some(from) = send_anchor.get(&message.id) {
                    let _ = writeln!(
                        edges,
                        "  {from} -> {anchor} [class=\"message\", label={}];",
                        quote(&message.kind)
                    );
                }
                lane_anchors[lane].push(anchor);
            }
            Event::DeliverTimeout { timeout } => {
                let lane = lane_of[&timeout.node];
                let anchor = format!("n{lane}_s{step}");
                let _ = writeln!(
                    vertices,
                    "  {anchor} [label={}, shape=box, style=rounded];",
                    quote(&timeout.kind)
                );
                lane_anchors[lane].push(anchor);
            }
            Event::DropMessage { message } => {
                let lane = lane_of[&message.to];
                let sink = format!("x{lane}_s{step}");
                let _ = writeln!(vertices, "  {sink} [label=\"✕\", shape=plaintext];");
                if let Some(from) = send_anchor.get(&message.id) {
                    let _ = writeln!(
                        edges,
                        "  {from} -> {sink} [class=\"drop\", label={}, style=dashed];",
                        quote(&message.kind)
                    );
                }
            }
            Event::DuplicateMessage { original, copy_id } => {
                if let Some(from) = send_anchor.get(&original.id).cloned() {
                    send_anchor.insert(*copy_id, from);
                }
            }
            Event::Start => unreachable!("start only at the root"),
        }
        if let Some(sender) = node.event.target() {
            let anchor = format!("n{}_s{step}", lane_of[sender]);
            if matches!(node.event, Event::DeliverMessage { .. } | Event::DeliverTimeout { .. }) {
                for m in node.snapshot.messages().filter(|m| !before.contains(&m.id)) {
                    send_anchor.insert(m.id, anchor.clone());
                }
            }
        }
    }

    let final_snapshot = &path[path.len() - 1].snapshot;
    for m in final_snapshot.messages() {
        let lane = lane_of[&m.to];
        let open = format!("q{lane}_m{}", m.id.0);
        let _ = writeln!(vertices, "  {open} [label=\"\", shape=none, width=0, height=0];");
        if let Some(from) = send_anchor.get(&m.id) {
            let _ = writeln!(
                edges,
                "  {from} -> {open} [class=\"pending\", label={}, style=dotted];",
                quote(&m.kind)
            );
        }
    }

    let mut out = String::from("digraph spacetime {\n  rankdir=TB;\n  node [fontname=\"Helvetica\"];\n");
    out.push_str(&vertices);
    let heads: Vec<String> = (0..lanes.len()).map(|l| format!("n{l}_s0;")).collect();
    let _ = writeln!(out, "  {{rank=same; {}}}", heads.join(" "));
    for anchors in &lane_anchors {
        for pair in anchors.windows(2) {
            let _ = writeln!(
                out,
                "  {} -> {} [class=\"lane\", dir=none, weight=100];",
                pair[0], pair[1]
            );
        }
    }
    out.push_str(&edges);
    out.push_str("}\n");
    Ok(out)
}
