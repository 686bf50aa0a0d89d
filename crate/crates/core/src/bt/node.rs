use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ActionClient, Blackboard, TickStatus};
use crate::clock::SimTime;
use crate::protocol::{GoalId, GoalState, Params};

pub struct TickCtx<'a> {
    pub bb: &'a mut Blackboard,
    pub client: &'a mut dyn ActionClient,
    pub now: SimTime,
}

/// Local work done by an action leaf without a device goal.
pub trait Task {
    fn tick(&mut self, ctx: &mut TickCtx) -> TickStatus;

    /// Called when the leaf is interrupted while RUNNING or is reset.
    fn halt(&mut self, _ctx: &mut TickCtx) {}
}

impl<F: FnMut(&mut TickCtx) -> TickStatus> Task for F {
    fn tick(&mut self, ctx: &mut TickCtx) -> TickStatus {
        self(ctx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Truthy(String),
    ListEmpty(String),
    ListNonEmpty(String),
    Not(Box<Predicate>),
    Const(bool),
}

impl Predicate {
    pub fn eval(&self, bb: &Blackboard) -> bool {
        match self {
            Predicate::Truthy(k) => bb.truthy(k),
            Predicate::ListEmpty(k) => bb.list_len(k) == 0,
            Predicate::ListNonEmpty(k) => bb.list_len(k) > 0,
            Predicate::Not(p) => !p.eval(bb),
            Predicate::Const(b) => *b,
        }
    }
}

/// A device goal issued from a leaf. `params` may hold `$key` references
/// resolved against the blackboard at dispatch time.
pub struct DeviceAction {
    pub device: String,
    pub action: String,
    pub params: Value,
    /// Blackboard key receiving the goal's result params on success.
    pub result_key: Option<String>,
    goal: Option<GoalId>,
}

impl DeviceAction {
    pub fn new(device: &str, action: &str, params: Value, result_key: Option<String>) -> DeviceAction {
        DeviceAction { device: device.into(), action: action.into(), params, result_key, goal: None }
    }

    pub fn in_flight(&self) -> Option<&GoalId> {
        self.goal.as_ref()
    }

    fn tick(&mut self, name: &str, ctx: &mut TickCtx) -> TickStatus {
        if self.goal.is_none() {
            let params: Params = match ctx.bb.resolve(&self.params) {
                Ok(Value::Object(m)) => m.into_iter().collect(),
                Ok(Value::Null) => Params::new(),
                Ok(other) => return self.fail(ctx, format!("params of `{name}` must be an object, got {other}")),
                Err(e) => return self.fail(ctx, e),
            };
            match ctx.client.submit(&self.device, &self.action, params) {
                Ok(id) => {
                    ctx.bb.set(&format!("goal.{name}"), id.0.clone());
                    self.goal = Some(id);
                }
                Err(e) => return self.fail(ctx, e),
            }
        }
        let id = self.goal.clone().expect("goal set above");
        let Some(status) = ctx.client.status(&id) else {
            return TickStatus::Running;
        };
        match status.state {
            GoalState::Succeeded => {
                self.goal = None;
                if let Some(k) = &self.result_key {
                    ctx.bb.set(k, Value::Object(status.result.into_iter().collect()));
                }
                TickStatus::Success
            }
            GoalState::Failed | GoalState::Canceled | GoalState::Rejected => {
                self.goal = None;
                let err = json!({
                    "node": name,
                    "goal_id": id.0,
                    "state": status.state,
                    "result": status.result,
                });
                ctx.bb.set("last_error", err);
                TickStatus::Failure
            }
            _ => TickStatus::Running,
        }
    }

    fn fail(&mut self, ctx: &mut TickCtx, msg: String) -> TickStatus {
        ctx.bb.set("last_error", json!({ "device": self.device, "action": self.action, "error": msg }));
        TickStatus::Failure
    }

    fn halt(&mut self, ctx: &mut TickCtx) {
        if let Some(id) = self.goal.take() {
            ctx.client.cancel(&id);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_s: f64,
    pub cap_s: f64,
    /// Consecutive failures tolerated before giving up; `None` retries forever.
    pub max_attempts: Option<u32>,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy { base_s: 1.0, cap_s: 30.0, max_attempts: None }
    }
}

impl RetryPolicy {
    /// Wait before attempt `n + 1` after `n` failures.
    pub fn backoff(&self, failures: u32) -> SimTime {
        let exp = failures.saturating_sub(1).min(62);
        SimTime::from_secs_f64((self.base_s * 2f64.powi(exp as i32)).min(self.cap_s))
    }
}

pub enum Node {
    Parallel { name: String, children: Vec<Node> },
    Sequence { name: String, children: Vec<Node>, current: usize },
    Fallback { name: String, children: Vec<Node>, current: usize },
    Device { name: String, action: DeviceAction },
    Task { name: String, task: Box<dyn Task> },
    Condition { name: String, predicate: Predicate },
    Retry { name: String, child: Box<Node>, policy: RetryPolicy, counter_key: Option<String>, failures: u32, wait_until: Option<SimTime> },
}

impl Node {
    pub fn parallel(name: &str, children: Vec<Node>) -> Node {
        Node::Parallel { name: name.into(), children }
    }

    pub fn sequence(name: &str, children: Vec<Node>) -> Node {
        Node::Sequence { name: name.into(), children, current: 0 }
    }

    pub fn fallback(name: &str, children: Vec<Node>) -> Node {
        Node::Fallback { name: name.into(), children, current: 0 }
    }

    pub fn device(name: &str, device: &str, action: &str, params: Value, result_key: Option<&str>) -> Node {
        Node::Device { name: name.into(), action: DeviceAction::new(device, action, params, result_key.map(Into::into)) }
    }

    pub fn task(name: &str, task: impl Task + 'static) -> Node {
        Node::Task { name: name.into(), task: Box::new(task) }
    }

    pub fn condition(name: &str, predicate: Predicate) -> Node {
        Node::Condition { name: name.into(), predicate }
    }

    pub fn retry(name: &str, child: Node, policy: RetryPolicy, counter_key: Option<&str>) -> Node {
        Node::Retry {
            name: name.into(),
            child: Box::new(child),
            policy,
            counter_key: counter_key.map(Into::into),
            failures: 0,
            wait_until: None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Node::Parallel { name, .. }
            | Node::Sequence { name, .. }
            | Node::Fallback { name, .. }
            | Node::Device { name, .. }
            | Node::Task { name, .. }
            | Node::Condition { name, .. }
            | Node::Retry { name, .. } => name,
        }
    }

    pub fn children(&self) -> &[Node] {
        match self {
            Node::Parallel { children, .. } | Node::Sequence { children, .. } | Node::Fallback { children, .. } => children,
            Node::Retry { child, .. } => std::slice::from_ref(child),
            _ => &[],
        }
    }

    pub fn tick(&mut self, ctx: &mut TickCtx) -> TickStatus {
        match self {
            Node::Parallel { children, .. } => {
                let mut statuses = Vec::with_capacity(children.len());
                for c in children.iter_mut() {
                    statuses.push(c.tick(ctx));
                }
                if statuses.contains(&TickStatus::Failure) {
                    for (c, s) in children.iter_mut().zip(&statuses) {
                        if *s == TickStatus::Running {
                            c.halt(ctx);
                        }
                    }
                    TickStatus::Failure
                } else if statuses.iter().all(|s| *s == TickStatus::Success) {
                    TickStatus::Success
                } else {
                    TickStatus::Running
                }
            }
            Node::Sequence { children, current, .. } => {
                tick_composite(children, current, ctx, TickStatus::Success)
            }
            Node::Fallback { children, current, .. } => {
                tick_composite(children, current, ctx, TickStatus::Failure)
            }
            Node::Device { name, action } => action.tick(name, ctx),
            Node::Task { task, .. } => task.tick(ctx),
            Node::Condition { predicate, .. } => {
                if predicate.eval(ctx.bb) {
                    TickStatus::Success
                } else {
                    TickStatus::Failure
                }
            }
            Node::Retry { child, policy, counter_key, failures, wait_until, .. } => {
                if let Some(t) = *wait_until {
                    if ctx.now < t {
                        return TickStatus::Running;
                    }
                    *wait_until = None;
                }
                match child.tick(ctx) {
                    TickStatus::Success => {
                        *failures = 0;
                        TickStatus::Success
                    }
                    TickStatus::Running => TickStatus::Running,
                    TickStatus::Failure => {
                        *failures += 1;
                        if let Some(k) = counter_key {
                            ctx.bb.increment(k);
                        }
                        child.reset(ctx);
                        if policy.max_attempts.is_some_and(|m| *failures >= m) {
                            *failures = 0;
                            return TickStatus::Failure;
                        }
                        *wait_until = Some(ctx.now + policy.backoff(*failures));
                        TickStatus::Running
                    }
                }
            }
        }
    }

    /// Interrupts a RUNNING subtree: in-flight goals are canceled and
    /// composite positions reset.
    pub fn halt(&mut self, ctx: &mut TickCtx) {
        self.reset(ctx);
    }

    fn reset(&mut self, ctx: &mut TickCtx) {
        match self {
            Node::Parallel { children, .. } => children.iter_mut().for_each(|c| c.reset(ctx)),
            Node::Sequence { children, current, .. } | Node::Fallback { children, current, .. } => {
                children.iter_mut().for_each(|c| c.reset(ctx));
                *current = 0;
            }
            Node::Device { action, .. } => action.halt(ctx),
            Node::Task { task, .. } => task.halt(ctx),
            Node::Condition { .. } => {}
            Node::Retry { child, failures, wait_until, .. } => {
                child.reset(ctx);
                *failures = 0;
                *wait_until = None;
            }
        }
    }
}

/// Shared body of SEQUENCE (`pass` = SUCCESS) and FALLBACK (`pass` =
/// FAILURE). Both resume at the child that was RUNNING on the previous tick.
fn tick_composite(children: &mut [Node], current: &mut usize, ctx: &mut TickCtx, pass: TickStatus) -> TickStatus {
    while *current < children.len() {
        match children[*current].tick(ctx) {
            s if s == pass => *current += 1,
            TickStatus::Running => return TickStatus::Running,
            other => {
                *current = 0;
                return other;
            }
        }
    }
    *current = 0;
    pass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::LocalClient;
    use crate::clock::VirtualClock;
    use crate::runtime::Runtime;
    use std::cell::Cell;
    use std::rc::Rc;
    use std::sync::Arc;

    fn client() -> LocalClient {
        LocalClient::new(Arc::new(Runtime::new(Arc::new(VirtualClock::new()))))
    }

    fn counted(status: TickStatus, hits: Rc<Cell<u32>>) -> Node {
        Node::task("leaf", move |_: &mut TickCtx| {
            hits.set(hits.get() + 1);
            status
        })
    }

    #[test]
    fn sequence_resumes_at_running_child() {
        let a = Rc::new(Cell::new(0));
        let b = Rc::new(Cell::new(0));
        let mut n = 0;
        let b2 = b.clone();
        let mut seq = Node::sequence(
            "s",
            vec![
                counted(TickStatus::Success, a.clone()),
                Node::task("b", move |_: &mut TickCtx| {
                    b2.set(b2.get() + 1);
                    n += 1;
                    if n < 3 { TickStatus::Running } else { TickStatus::Success }
                }),
            ],
        );
        let mut bb = Blackboard::new();
        let mut c = client();
        let mut ctx = TickCtx { bb: &mut bb, client: &mut c, now: SimTime::ZERO };
        assert_eq!(seq.tick(&mut ctx), TickStatus::Running);
        assert_eq!(seq.tick(&mut ctx), TickStatus::Running);
        assert_eq!(seq.tick(&mut ctx), TickStatus::Success);
        assert_eq!(a.get(), 1);
        assert_eq!(b.get(), 3);
    }

    #[test]
    fn retry_backs_off_and_counts() {
        let mut fails = 2;
        let mut r = Node::retry(
            "r",
            Node::task("flaky", move |_: &mut TickCtx| {
                if fails > 0 {
                    fails -= 1;
                    TickStatus::Failure
                } else {
                    TickStatus::Success
                }
            }),
            RetryPolicy::default(),
            Some("retries"),
        );
        let mut bb = Blackboard::new();
        let mut c = client();
        let mut now = SimTime::ZERO;
        let mut ticks = 0;
        loop {
            let mut ctx = TickCtx { bb: &mut bb, client: &mut c, now };
            let s = r.tick(&mut ctx);
            ticks += 1;
            if s == TickStatus::Success {
                break;
            }
            now += SimTime::from_millis(100);
        }
        // 1 s then 2 s of backoff at 10 Hz.
        assert_eq!(ticks, 31);
        assert_eq!(bb.get("retries"), Some(&json!(2)));
    }

    #[test]
    fn retry_gives_up() {
        let policy = RetryPolicy { base_s: 0.0, cap_s: 0.0, max_attempts: Some(3) };
        let hits = Rc::new(Cell::new(0));
        let mut r = Node::retry("r", counted(TickStatus::Failure, hits.clone()), policy, None);
        let mut bb = Blackboard::new();
        let mut c = client();
        let mut ctx = TickCtx { bb: &mut bb, client: &mut c, now: SimTime::ZERO };
        assert_eq!(r.tick(&mut ctx), TickStatus::Running);
        assert_eq!(r.tick(&mut ctx), TickStatus::Running);
        assert_eq!(r.tick(&mut ctx), TickStatus::Failure);
        assert_eq!(hits.get(), 3);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        let secs: Vec<f64> = (1..=7).map(|n| p.backoff(n).as_secs_f64()).collect();
        assert_eq!(secs, vec![1.0, 2.0, 4.0, 8.0, 16.0, 30.0, 30.0]);
    }

    #[test]
    fn unresolved_param_fails_without_dispatch() {
        let mut n = Node::device("mv", "gantry", "move", json!({"x": "$nope"}), None);
        let mut bb = Blackboard::new();
        let mut c = client();
        let mut ctx = TickCtx { bb: &mut bb, client: &mut c, now: SimTime::ZERO };
        assert_eq!(n.tick(&mut ctx), TickStatus::Failure);
        assert!(bb.get("last_error").is_some());
    }
}
