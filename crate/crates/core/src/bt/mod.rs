//! Behavior trees: parallel, sequence, fallback, action and condition nodes,
//! plus a retry decorator. Action leaves dispatch device goals through an
//! [`ActionClient`] and poll them, so a tick never blocks.

mod blackboard;
mod client;
mod node;
mod runner;
mod spec;

pub use blackboard::Blackboard;
pub use client::{ActionClient, LocalClient};
pub use node::{DeviceAction, Node, Predicate, RetryPolicy, Task, TickCtx};
pub use runner::{run_tree, RunOutcome, RunnerConfig};
pub use spec::{build_tree, NodeSpec, TaskRegistry};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BtError {
    #[error("invalid tree at {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("tree file: {0}")]
    Parse(String),
}
