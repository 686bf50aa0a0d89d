//! The goal lifecycle state machine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::GoalState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalEvent {
    Accept,
    Reject,
    Start,
    Feedback,
    Succeed,
    Fail,
    CancelRequest,
    CancelDone,
}

impl GoalEvent {
    pub const ALL: [GoalEvent; 8] = [
        GoalEvent::Accept,
        GoalEvent::Reject,
        GoalEvent::Start,
        GoalEvent::Feedback,
        GoalEvent::Succeed,
        GoalEvent::Fail,
        GoalEvent::CancelRequest,
        GoalEvent::CancelDone,
    ];
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("illegal goal transition: {event:?} in state {state}")]
pub struct TransitionError {
    pub state: GoalState,
    pub event: GoalEvent,
}

/// Applies `event` to `state`.
///
/// `accept` acknowledges a pending goal without starting it. `feedback` is only
/// legal while the goal is executing. Terminal states reject every event.
pub fn goal_transition(state: GoalState, event: GoalEvent) -> Result<GoalState, TransitionError> {
    use GoalEvent as E;
    use GoalState as S;
    let next = match (state, event) {
        (S::Pending, E::Accept) => S::Pending,
        (S::Pending, E::Start) => S::Active,
        (S::Pending, E::Reject) => S::Rejected,
        (S::Active, E::Feedback) => S::Active,
        (S::Active, E::Succeed) => S::Succeeded,
        (S::Active, E::Fail) => S::Failed,
        (S::Active, E::CancelRequest) => S::Canceling,
        (S::Canceling, E::Feedback) => S::Canceling,
        (S::Canceling, E::CancelDone) => S::Canceled,
        (S::Canceling, E::Succeed) => S::Succeeded,
        (S::Canceling, E::Fail) => S::Failed,
        _ => return Err(TransitionError { state, event }),
    };
    Ok(next)
}

/// The event the runtime applies when a goal outlives its deadline.
pub fn timeout_event(state: GoalState) -> Option<GoalEvent> {
    match state {
        GoalState::Pending => Some(GoalEvent::Reject),
        GoalState::Active => Some(GoalEvent::Fail),
        GoalState::Canceling => Some(GoalEvent::CancelDone),
        _ => None,
    }
}
