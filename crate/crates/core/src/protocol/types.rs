use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::SimTime;

/// Key→value map used for goal parameters, feedback and results.
pub type Params = BTreeMap<String, Value>;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(
    /// Opaque device identifier, unique within a registry.
    DeviceId
);
string_id!(
    /// Goal identifier, unique per runtime session.
    GoalId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Number,
    Integer,
    Text,
    Bool,
}

impl ParamKind {
    fn accepts(self, value: &Value) -> bool {
        match self {
            ParamKind::Number => value.as_f64().is_some_and(f64::is_finite),
            ParamKind::Integer => value.as_i64().is_some() || value.as_u64().is_some(),
            ParamKind::Text => value.is_string(),
            ParamKind::Bool => value.is_boolean(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub required: bool,
    /// Semantic unit or meaning, e.g. `mm` or `mm/s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind, unit: Option<&str>) -> ParamSpec {
        ParamSpec { name: name.to_string(), kind, required: true, unit: unit.map(str::to_string) }
    }

    pub fn optional(name: &str, kind: ParamKind, unit: Option<&str>) -> ParamSpec {
        ParamSpec { name: name.to_string(), kind, required: false, unit: unit.map(str::to_string) }
    }
}

/// One action a device can perform, with its parameter schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub device_id: DeviceId,
    pub action_name: String,
    #[serde(default)]
    pub params_schema: Vec<ParamSpec>,
    /// Goals still running after this long are failed by the runtime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
}

impl ActionSpec {
    pub fn new(device_id: &DeviceId, action_name: &str, params_schema: Vec<ParamSpec>) -> ActionSpec {
        ActionSpec {
            device_id: device_id.clone(),
            action_name: action_name.to_string(),
            params_schema,
            timeout_s: None,
        }
    }

    /// Checks `params` against the schema: required keys present, no unknown
    /// keys, values of the declared kind.
    pub fn validate_params(&self, params: &Params) -> Result<(), String> {
        for spec in &self.params_schema {
            match params.get(&spec.name) {
                None if spec.required => return Err(format!("missing parameter `{}`", spec.name)),
                None => {}
                Some(v) if !spec.kind.accepts(v) => {
                    return Err(format!("parameter `{}` must be {:?}, got {v}", spec.name, spec.kind))
                }
                Some(_) => {}
            }
        }
        if let Some(unknown) = params.keys().find(|k| !self.params_schema.iter().any(|s| &s.name == *k)) {
            return Err(format!("unknown parameter `{unknown}`"));
        }
        Ok(())
    }
}

/// A registered device as listed by discovery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: DeviceId,
    pub display_name: String,
    pub actions: Vec<ActionSpec>,
    /// Stream-layer address, e.g. `ws://127.0.0.1:7101`.
    #[serde(default)]
    pub endpoint: String,
}

impl DeviceDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.device_id.0.is_empty() {
            return Err("device_id must not be empty".into());
        }
        if self.actions.is_empty() {
            return Err(format!("device `{}` exposes no actions", self.device_id));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.actions {
            if a.device_id != self.device_id {
                return Err(format!("action `{}` belongs to `{}`", a.action_name, a.device_id));
            }
            if !seen.insert(a.action_name.as_str()) {
                return Err(format!("duplicate action `{}` on `{}`", a.action_name, self.device_id));
            }
        }
        Ok(())
    }

    pub fn action(&self, name: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.action_name == name)
    }
}

/// A submitted goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionGoal {
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub action_name: String,
    pub params: Params,
    pub submitted_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GoalState {
    Pending,
    Active,
    Canceling,
    Succeeded,
    Failed,
    Canceled,
    Rejected,
}

impl GoalState {
    pub const ALL: [GoalState; 7] = [
        GoalState::Pending,
        GoalState::Active,
        GoalState::Canceling,
        GoalState::Succeeded,
        GoalState::Failed,
        GoalState::Canceled,
        GoalState::Rejected,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, GoalState::Succeeded | GoalState::Failed | GoalState::Canceled | GoalState::Rejected)
    }
}

impl fmt::Display for GoalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

/// Snapshot of a goal's lifecycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalStatus {
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub action_name: String,
    pub state: GoalState,
    #[serde(default)]
    pub feedback: Params,
    /// Empty until the goal reaches a terminal state.
    #[serde(default)]
    pub result: Params,
    pub updated_at: SimTime,
}

/// Why a goal was rejected before execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    Busy,
    BadParams,
    OutOfRange,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Busy => "BUSY",
            RejectReason::BadParams => "BAD_PARAMS",
            RejectReason::OutOfRange => "OUT_OF_RANGE",
        }
    }

    pub fn parse(s: &str) -> Option<RejectReason> {
        match s {
            "BUSY" => Some(RejectReason::Busy),
            "BAD_PARAMS" => Some(RejectReason::BadParams),
            "OUT_OF_RANGE" => Some(RejectReason::OutOfRange),
            _ => None,
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
