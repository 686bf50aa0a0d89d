use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{DeviceDescriptor, DeviceId, GoalId, GoalState, GoalStatus, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    /// Device-local layer: clients talk directly to one device's server.
    Stream,
    /// Orchestration layer: clients talk to the bridge, which relays to devices.
    Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Submit,
    Cancel,
    StatusQuery,
    StatusEvent,
    FeedbackEvent,
    ResultEvent,
    Error,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Submit => "SUBMIT",
            MessageKind::Cancel => "CANCEL",
            MessageKind::StatusQuery => "STATUS_QUERY",
            MessageKind::StatusEvent => "STATUS_EVENT",
            MessageKind::FeedbackEvent => "FEEDBACK_EVENT",
            MessageKind::ResultEvent => "RESULT_EVENT",
            MessageKind::Error => "ERROR",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    NotFound,
    Duplicate,
    Protocol,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitBody {
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub action_name: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelBody {
    pub goal_id: GoalId,
}

/// Without a `goal_id` the query is a discovery request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StatusQueryBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_id: Option<GoalId>,
}

/// Carries either one goal snapshot or the discovery listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StatusEventBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<Vec<DeviceDescriptor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub feedback: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub state: GoalState,
    #[serde(default)]
    pub result: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_id: Option<GoalId>,
}

/// Message payload; the variant determines the frame's `kind`.
#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Submit(SubmitBody),
    Cancel(CancelBody),
    StatusQuery(StatusQueryBody),
    StatusEvent(StatusEventBody),
    FeedbackEvent(FeedbackBody),
    ResultEvent(ResultBody),
    Error(ErrorBody),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Submit(_) => MessageKind::Submit,
            Body::Cancel(_) => MessageKind::Cancel,
            Body::StatusQuery(_) => MessageKind::StatusQuery,
            Body::StatusEvent(_) => MessageKind::StatusEvent,
            Body::FeedbackEvent(_) => MessageKind::FeedbackEvent,
            Body::ResultEvent(_) => MessageKind::ResultEvent,
            Body::Error(_) => MessageKind::Error,
        }
    }

    /// The request sequence number this message answers, if any.
    pub fn in_reply_to(&self) -> Option<u64> {
        match self {
            Body::StatusEvent(b) => b.in_reply_to,
            Body::ResultEvent(b) => b.in_reply_to,
            Body::Error(b) => b.in_reply_to,
            _ => None,
        }
    }

    pub fn set_in_reply_to(&mut self, seq: Option<u64>) {
        match self {
            Body::StatusEvent(b) => b.in_reply_to = seq,
            Body::ResultEvent(b) => b.in_reply_to = seq,
            Body::Error(b) => b.in_reply_to = seq,
            _ => {}
        }
    }

    pub fn error(in_reply_to: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Body {
        Body::Error(ErrorBody { in_reply_to, code, message: message.into(), goal_id: None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireMessage {
    pub layer: Layer,
    pub seq: u64,
    pub body: Body,
}

impl WireMessage {
    pub fn new(layer: Layer, seq: u64, body: Body) -> WireMessage {
        WireMessage { layer, seq, body }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}
