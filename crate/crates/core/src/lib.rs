//! Step-through debugging for message-passing distributed systems.
//!
//! Nodes are ordinary handler code linked against a small shim. They never
//! talk to each other directly: every message and timer goes to a central
//! server which holds it in the recipient's inbox until the user (or the
//! explorer) chooses to deliver it. Since each node is a deterministic
//! function of its state and the delivered event, any point in history can be
//! reached again by restarting the nodes and replaying the events leading to
//! it.
//!
//! The pieces, bottom up:
//!
//! - [`model`]: snapshots, inboxes, events and the pure transition rules.
//! - [`wire`]: the newline-delimited JSON frames spoken with nodes and with
//!   the frontend.
//! - [`shim`]: the node side of the protocol.
//! - [`engine`]: a debugging session with its history tree and time travel.
//! - [`trace`], [`dot`], [`explore`]: saving schedules, drawing them, and
//!   searching for invariant violations.
//! - [`fixtures`]: example systems.

pub mod dot;
pub mod engine;
pub mod explore;
pub mod fixtures;
pub mod history;
pub mod model;
pub mod shim;
pub mod trace;
pub mod transport;
pub mod value;
pub mod wire;

pub use engine::{EngineError, Session};
pub use history::{HistoryId, HistoryTree};
pub use model::{Event, ItemId, NodeId, SystemSnapshot};
pub use value::Value;
