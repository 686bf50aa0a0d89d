use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BtError, Node, Predicate, RetryPolicy, Task};

/// Declarative tree, as stored in JSON tree files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeSpec {
    Parallel {
        name: String,
        children: Vec<NodeSpec>,
    },
    Sequence {
        name: String,
        children: Vec<NodeSpec>,
    },
    Fallback {
        name: String,
        children: Vec<NodeSpec>,
    },
    /// Either a device goal (`device` + `action`) or a named local `task`.
    Action {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        device: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<String>,
        #[serde(default, skip_serializing_if = "Value::is_null")]
        params: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<String>,
    },
    Condition {
        name: String,
        predicate: Predicate,
    },
    Retry {
        name: String,
        policy: RetryPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        counter_key: Option<String>,
        child: Box<NodeSpec>,
    },
}

type TaskFactory = Box<dyn Fn() -> Box<dyn Task>>;

/// Local tasks that action leaves may name.
#[derive(Default)]
pub struct TaskRegistry {
    factories: BTreeMap<String, TaskFactory>,
}

impl TaskRegistry {
    pub fn new() -> TaskRegistry {
        TaskRegistry::default()
    }

    pub fn register<F, T>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> T + 'static,
        T: Task + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(move || Box::new(factory()) as Box<dyn Task>));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    fn make(&self, name: &str) -> Option<Box<dyn Task>> {
        self.factories.get(name).map(|f| f())
    }
}

impl NodeSpec {
    pub fn from_json(text: &str) -> Result<NodeSpec, BtError> {
        serde_json::from_str(text).map_err(|e| BtError::Parse(e.to_string()))
    }

    pub fn name(&self) -> &str {
        match self {
            NodeSpec::Parallel { name, .. }
            | NodeSpec::Sequence { name, .. }
            | NodeSpec::Fallback { name, .. }
            | NodeSpec::Action { name, .. }
            | NodeSpec::Condition { name, .. }
            | NodeSpec::Retry { name, .. } => name,
        }
    }

    /// Structural checks plus, when `devices` is given, that every device
    /// leaf names an available device.
    pub fn validate(&self, tasks: &TaskRegistry, devices: Option<&[String]>) -> Result<(), BtError> {
        self.validate_at(&format!("/{}", self.name()), tasks, devices)
    }

    fn validate_at(&self, path: &str, tasks: &TaskRegistry, devices: Option<&[String]>) -> Result<(), BtError> {
        let bad = |reason: String| Err(BtError::Invalid { path: path.to_string(), reason });
        if self.name().is_empty() {
            return bad("node name must not be empty".into());
        }
        match self {
            NodeSpec::Parallel { children, .. } | NodeSpec::Sequence { children, .. } | NodeSpec::Fallback { children, .. } => {
                if children.is_empty() {
                    return bad("composite node needs at least one child".into());
                }
                for c in children {
                    c.validate_at(&format!("{path}/{}", c.name()), tasks, devices)?;
                }
                Ok(())
            }
            NodeSpec::Action { device, action, params, task, .. } => match (device, action, task) {
                (None, None, Some(t)) => {
                    if !params.is_null() {
                        return bad("task leaves take no params".into());
                    }
                    if !tasks.contains(t) {
                        return bad(format!("unknown task `{t}`"));
                    }
                    Ok(())
                }
                (Some(d), Some(a), None) => {
                    if a.is_empty() {
                        return bad("action name must not be empty".into());
                    }
                    if !(params.is_null() || params.is_object()) {
                        return bad("params must be an object".into());
                    }
                    if let Some(devs) = devices {
                        if !devs.iter().any(|x| x == d) {
                            return bad(format!("no binding for device `{d}`"));
                        }
                    }
                    Ok(())
                }
                _ => bad("action leaf needs either `device` and `action`, or `task`".into()),
            },
            NodeSpec::Condition { .. } => Ok(()),
            NodeSpec::Retry { policy, child, .. } => {
                if !(policy.base_s >= 0.0 && policy.cap_s >= policy.base_s && policy.cap_s.is_finite()) {
                    return bad("retry needs 0 <= base_s <= cap_s".into());
                }
                if policy.max_attempts == Some(0) {
                    return bad("max_attempts must be positive".into());
                }
                child.validate_at(&format!("{path}/{}", child.name()), tasks, devices)
            }
        }
    }
}

/// Validates `spec` and instantiates it.
pub fn build_tree(spec: &NodeSpec, tasks: &TaskRegistry, devices: Option<&[String]>) -> Result<Node, BtError> {
    spec.validate(tasks, devices)?;
    Ok(instantiate(spec, tasks))
}

fn instantiate(spec: &NodeSpec, tasks: &TaskRegistry) -> Node {
    let kids = |c: &[NodeSpec]| c.iter().map(|s| instantiate(s, tasks)).collect::<Vec<_>>();
    match spec {
        NodeSpec::Parallel { name, children } => Node::parallel(name, kids(children)),
        NodeSpec::Sequence { name, children } => Node::sequence(name, kids(children)),
        NodeSpec::Fallback { name, children } => Node::fallback(name, kids(children)),
        NodeSpec::Action { name, task: Some(t), .. } => {
            Node::Task { name: name.clone(), task: tasks.make(t).expect("validated") }
        }
        NodeSpec::Action { name, device, action, params, result_key, .. } => Node::device(
            name,
            device.as_deref().expect("validated"),
            action.as_deref().expect("validated"),
            params.clone(),
            result_key.as_deref(),
        ),
        NodeSpec::Condition { name, predicate } => Node::condition(name, predicate.clone()),
        NodeSpec::Retry { name, policy, counter_key, child } => {
            Node::retry(name, instantiate(child, tasks), *policy, counter_key.as_deref())
        }
    }
}
