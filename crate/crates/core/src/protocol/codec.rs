//! Text-frame codec: one JSON object per frame with the top-level keys
//! `layer`, `kind`, `seq` and `payload`, in that order.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::message::*;
use super::types::{Params, GoalStatus};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("invalid field `{field}`: {reason}")]
    Encode { field: String, reason: String },
    #[error("malformed frame at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("invalid message, field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl CodecError {
    fn field(&self) -> Option<&str> {
        match self {
            CodecError::Encode { field, .. } | CodecError::Validation { field, .. } => Some(field),
            CodecError::Parse { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct FrameOut<'a, P: Serialize> {
    layer: Layer,
    kind: MessageKind,
    seq: u64,
    payload: &'a P,
}

fn frame<P: Serialize>(msg: &WireMessage, payload: &P) -> String {
    // Serialization of these plain data types cannot fail.
    serde_json::to_string(&FrameOut { layer: msg.layer, kind: msg.kind(), seq: msg.seq, payload })
        .expect("payload serialization")
}

/// Encodes `msg` as a single UTF-8 text frame after validating its payload.
pub fn encode_message(msg: &WireMessage) -> Result<String, CodecError> {
    validate_body(&msg.body).map_err(|(field, reason)| CodecError::Encode { field, reason })?;
    Ok(match &msg.body {
        Body::Submit(b) => frame(msg, b),
        Body::Cancel(b) => frame(msg, b),
        Body::StatusQuery(b) => frame(msg, b),
        Body::StatusEvent(b) => frame(msg, b),
        Body::FeedbackEvent(b) => frame(msg, b),
        Body::ResultEvent(b) => frame(msg, b),
        Body::Error(b) => frame(msg, b),
    })
}

/// Decodes one text frame. Never panics; arbitrary bytes yield an error.
pub fn decode_message(frame: &[u8]) -> Result<WireMessage, CodecError> {
    let text = std::str::from_utf8(frame).map_err(|e| CodecError::Parse {
        offset: e.valid_up_to(),
        reason: "invalid UTF-8".into(),
    })?;
    if text.trim().is_empty() {
        return Err(CodecError::Parse { offset: 0, reason: "empty frame".into() });
    }
    let value: Value = serde_json::from_str(text).map_err(|e| CodecError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(CodecError::Validation { field: "$".into(), reason: "frame must be a JSON object".into() });
    };
    let layer: Layer = take_field(&mut obj, "layer")?;
    let kind: MessageKind = take_field(&mut obj, "kind")?;
    let seq: u64 = take_field(&mut obj, "seq")?;
    let payload = obj.remove("payload").ok_or_else(|| missing("payload"))?;
    if let Some(extra) = obj.keys().next() {
        return Err(CodecError::Validation { field: extra.clone(), reason: "unknown top-level key".into() });
    }
    let body = match kind {
        MessageKind::Submit => Body::Submit(payload_as(payload)?),
        MessageKind::Cancel => Body::Cancel(payload_as(payload)?),
        MessageKind::StatusQuery => Body::StatusQuery(payload_as(payload)?),
        MessageKind::StatusEvent => Body::StatusEvent(payload_as(payload)?),
        MessageKind::FeedbackEvent => Body::FeedbackEvent(payload_as(payload)?),
        MessageKind::ResultEvent => Body::ResultEvent(payload_as(payload)?),
        MessageKind::Error => Body::Error(payload_as(payload)?),
    };
    validate_body(&body).map_err(|(field, reason)| CodecError::Validation { field, reason })?;
    Ok(WireMessage { layer, seq, body })
}

fn missing(field: &str) -> CodecError {
    CodecError::Validation { field: field.into(), reason: "missing".into() }
}

fn take_field<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<T, CodecError> {
    let v = obj.remove(key).ok_or_else(|| missing(key))?;
    serde_json::from_value(v).map_err(|e| CodecError::Validation { field: key.into(), reason: e.to_string() })
}

fn payload_as<T: DeserializeOwned>(payload: Value) -> Result<T, CodecError> {
    serde_json::from_value(payload).map_err(|e| {
        let reason = e.to_string();
        let field = field_from_serde_message(&reason)
            .map(|f| format!("payload.{f}"))
            .unwrap_or_else(|| "payload".into());
        CodecError::Validation { field, reason }
    })
}

// serde reports "missing field `x`" / "unknown field `x`, expected ...".
fn field_from_serde_message(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

type Invalid = (String, String);

fn non_empty(field: &str, s: &str) -> Result<(), Invalid> {
    if s.trim().is_empty() {
        Err((field.to_string(), "must not be empty".into()))
    } else {
        Ok(())
    }
}

fn finite_map(field: &str, map: &Params) -> Result<(), Invalid> {
    fn check(v: &Value) -> bool {
        match v {
            Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
            Value::Array(a) => a.iter().all(check),
            Value::Object(o) => o.values().all(check),
            _ => true,
        }
    }
    for (k, v) in map {
        non_empty(field, k)?;
        if !check(v) {
            return Err((format!("{field}.{k}"), "non-finite number".into()));
        }
    }
    Ok(())
}

fn validate_status(prefix: &str, g: &GoalStatus) -> Result<(), Invalid> {
    non_empty(&format!("{prefix}.goal_id"), &g.goal_id.0)?;
    non_empty(&format!("{prefix}.device_id"), &g.device_id.0)?;
    non_empty(&format!("{prefix}.action_name"), &g.action_name)?;
    finite_map(&format!("{prefix}.feedback"), &g.feedback)?;
    finite_map(&format!("{prefix}.result"), &g.result)
}

/// Schema rules beyond what the types enforce.
pub fn validate_body(body: &Body) -> Result<(), Invalid> {
    match body {
        Body::Submit(b) => {
            non_empty("payload.goal_id", &b.goal_id.0)?;
            non_empty("payload.device_id", &b.device_id.0)?;
            non_empty("payload.action_name", &b.action_name)?;
            finite_map("payload.params", &b.params)
        }
        Body::Cancel(b) => non_empty("payload.goal_id", &b.goal_id.0),
        Body::StatusQuery(b) => match &b.goal_id {
            Some(g) => non_empty("payload.goal_id", &g.0),
            None => Ok(()),
        },
        Body::StatusEvent(b) => match (&b.goal, &b.devices) {
            (Some(g), None) => validate_status("payload.goal", g),
            (None, Some(devices)) => {
                for (i, d) in devices.iter().enumerate() {
                    d.validate().map_err(|r| (format!("payload.devices[{i}]"), r))?;
                }
                Ok(())
            }
            _ => Err(("payload".into(), "exactly one of `goal` or `devices` is required".into())),
        },
        Body::FeedbackEvent(b) => {
            non_empty("payload.goal_id", &b.goal_id.0)?;
            non_empty("payload.device_id", &b.device_id.0)?;
            finite_map("payload.feedback", &b.feedback)
        }
        Body::ResultEvent(b) => {
            non_empty("payload.goal_id", &b.goal_id.0)?;
            non_empty("payload.device_id", &b.device_id.0)?;
            if !b.state.is_terminal() {
                return Err(("payload.state".into(), format!("{} is not terminal", b.state)));
            }
            finite_map("payload.result", &b.result)
        }
        Body::Error(b) => non_empty("payload.message", &b.message),
    }
}

/// Returns the name of the offending field for encode/validation errors.
pub fn offending_field(err: &CodecError) -> Option<&str> {
    err.field()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::types::{DeviceId, GoalId};
    use serde_json::json;

    fn submit() -> WireMessage {
        let mut params = Params::new();
        params.insert("x".into(), json!(100.0));
        WireMessage::new(
            Layer::Stream,
            1,
            Body::Submit(SubmitBody {
                goal_id: GoalId::from("g-1"),
                device_id: DeviceId::from("gantry"),
                action_name: "move".into(),
                params,
            }),
        )
    }

    #[test]
    fn round_trip_submit() {
        let m = submit();
        let f = encode_message(&m).unwrap();
        assert!(f.starts_with(r#"{"layer":"STREAM","kind":"SUBMIT","seq":1,"payload":"#));
        assert_eq!(decode_message(f.as_bytes()).unwrap(), m);
    }

    #[test]
    fn empty_frame_is_parse_error() {
        assert!(matches!(decode_message(b""), Err(CodecError::Parse { offset: 0, .. })));
    }

    #[test]
    fn parse_error_reports_offset() {
        let err = decode_message(br#"{"layer":"STREAM",,}"#).unwrap_err();
        assert!(matches!(err, CodecError::Parse { offset: 18, .. }), "{err:?}");
        let err = decode_message(&[b'{', 0xff]).unwrap_err();
        assert!(matches!(err, CodecError::Parse { offset: 1, .. }));
    }

    #[test]
    fn unknown_kind_is_validation_error() {
        let err = decode_message(br#"{"layer":"STREAM","kind":"LAUNCH","seq":1,"payload":{}}"#).unwrap_err();
        assert_eq!(offending_field(&err), Some("kind"));
    }

    #[test]
    fn missing_payload_field_is_named() {
        let err = decode_message(br#"{"layer":"ACTION","kind":"CANCEL","seq":3,"payload":{}}"#).unwrap_err();
        assert_eq!(offending_field(&err), Some("payload.goal_id"));
    }

    #[test]
    fn encode_rejects_empty_device() {
        let mut m = submit();
        if let Body::Submit(b) = &mut m.body {
            b.device_id = DeviceId::from("");
        }
        let err = encode_message(&m).unwrap_err();
        assert_eq!(offending_field(&err), Some("payload.device_id"));
    }

    #[test]
    fn result_event_must_be_terminal() {
        let m = WireMessage::new(
            Layer::Action,
            4,
            Body::ResultEvent(ResultBody {
                in_reply_to: None,
                goal_id: GoalId::from("g"),
                device_id: DeviceId::from("d"),
                state: crate::protocol::GoalState::Active,
                result: Params::new(),
            }),
        );
        assert_eq!(offending_field(&encode_message(&m).unwrap_err()), Some("payload.state"));
    }
}
