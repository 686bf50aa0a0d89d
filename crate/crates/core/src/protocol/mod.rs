//! Two-layer wire protocol: message schemas, the text-frame codec, the goal
//! state machine and per-connection sequence tracking.
//!
//! The `STREAM` layer is spoken by each device's own server; the `ACTION`
//! layer by the bridge that fronts all devices. Both use the same frames.

mod codec;
mod connection;
mod goal;
mod message;
mod types;

pub use codec::{decode_message, encode_message, offending_field, validate_body, CodecError};
pub use connection::{SeqRegression, SeqTracker};
pub use goal::{goal_transition, timeout_event, GoalEvent, TransitionError};
pub use message::*;
pub use types::*;
