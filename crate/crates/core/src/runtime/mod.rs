//! Device runtime: the registry of action-server blocks, goal bookkeeping,
//! and the serial executor that steps each device's active goal.
//!
//! Each device runs at most one goal at a time. A submit while another goal
//! is non-terminal on the same device is rejected with `BUSY`.

mod driver;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::json;
use thiserror::Error;
use tokio::sync::broadcast;

pub use driver::{ActionHandler, ActionRun, DriverBinding, Immediate, StartError, Step, Timed};

use crate::clock::{SimTime, VirtualClock};
use crate::protocol::{
    goal_transition, timeout_event, ActionGoal, DeviceDescriptor, DeviceId, GoalEvent, GoalId, GoalState,
    GoalStatus, Params, RejectReason,
};

/// Goals remembered per device, terminal ones evicted oldest first.
pub const GOAL_HISTORY: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("device `{0}` is already registered")]
    AlreadyRegistered(DeviceId),
    #[error("invalid registration: {0}")]
    InvalidRegistration(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubmitError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("goal id `{0}` was already used for a different request")]
    Duplicate(GoalId),
    #[error("goal {goal_id} rejected ({reason}): {message}")]
    Rejected { goal_id: GoalId, reason: RejectReason, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum RuntimeEvent {
    Status(GoalStatus),
    Feedback { goal_id: GoalId, device_id: DeviceId, feedback: Params },
    Result(GoalStatus),
}

impl RuntimeEvent {
    pub fn device_id(&self) -> &DeviceId {
        match self {
            RuntimeEvent::Status(s) | RuntimeEvent::Result(s) => &s.device_id,
            RuntimeEvent::Feedback { device_id, .. } => device_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CancelAck {
    pub goal_id: GoalId,
    pub state: GoalState,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationHandle {
    pub device_id: DeviceId,
    pub instance: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceInfo {
    pub instance: u64,
    pub registered_at: SimTime,
    pub uptime: SimTime,
    pub driver_invocations: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalLogEntry {
    pub at: SimTime,
    pub goal_id: GoalId,
    pub device_id: DeviceId,
    pub action_name: String,
    pub state: GoalState,
}

struct GoalRecord {
    goal: ActionGoal,
    status: GoalStatus,
}

struct Active {
    goal_id: GoalId,
    run: Box<dyn ActionRun>,
    deadline: Option<SimTime>,
}

struct DeviceInner {
    binding: DriverBinding,
    records: VecDeque<GoalRecord>,
    active: Option<Active>,
    invocations: u64,
}

impl DeviceInner {
    fn record_mut(&mut self, id: &GoalId) -> Option<&mut GoalRecord> {
        self.records.iter_mut().rev().find(|r| &r.goal.goal_id == id)
    }

    fn record(&self, id: &GoalId) -> Option<&GoalRecord> {
        self.records.iter().rev().find(|r| &r.goal.goal_id == id)
    }
}

struct DeviceSlot {
    descriptor: DeviceDescriptor,
    instance: u64,
    registered_at: SimTime,
    inner: Mutex<DeviceInner>,
}

pub struct Runtime {
    clock: Arc<VirtualClock>,
    devices: RwLock<BTreeMap<DeviceId, Arc<DeviceSlot>>>,
    goal_index: RwLock<HashMap<GoalId, DeviceId>>,
    next_goal: AtomicU64,
    next_instance: AtomicU64,
    events: broadcast::Sender<RuntimeEvent>,
    goal_log: Mutex<Option<Vec<GoalLogEntry>>>,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime::new(Arc::new(VirtualClock::new()))
    }
}

impl Runtime {
    pub fn new(clock: Arc<VirtualClock>) -> Runtime {
        let (events, _) = broadcast::channel(4096);
        Runtime {
            clock,
            devices: RwLock::new(BTreeMap::new()),
            goal_index: RwLock::new(HashMap::new()),
            next_goal: AtomicU64::new(1),
            next_instance: AtomicU64::new(1),
            events,
            goal_log: Mutex::new(None),
        }
    }

    pub fn clock(&self) -> &Arc<VirtualClock> {
        &self.clock
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    /// Starts recording every goal state change (used for interleaving checks).
    pub fn enable_goal_log(&self) {
        self.goal_log.lock().unwrap().get_or_insert_with(Vec::new);
    }

    pub fn goal_log(&self) -> Vec<GoalLogEntry> {
        self.goal_log.lock().unwrap().clone().unwrap_or_default()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<RuntimeEvent> {
        self.events.subscribe()
    }

    pub fn register_device(
        &self,
        descriptor: DeviceDescriptor,
        binding: DriverBinding,
    ) -> Result<RegistrationHandle, RuntimeError> {
        descriptor.validate().map_err(RuntimeError::InvalidRegistration)?;
        if binding.device_id != descriptor.device_id {
            return Err(RuntimeError::InvalidRegistration(format!(
                "binding is for `{}`, descriptor for `{}`",
                binding.device_id, descriptor.device_id
            )));
        }
        for a in &descriptor.actions {
            if !binding.actions().any(|h| h == a.action_name) {
                return Err(RuntimeError::InvalidRegistration(format!("no handler for action `{}`", a.action_name)));
            }
        }
        if let Some(extra) = binding.actions().find(|h| descriptor.action(h).is_none()) {
            return Err(RuntimeError::InvalidRegistration(format!("handler `{extra}` has no action spec")));
        }
        let mut devices = self.devices.write().unwrap();
        if devices.contains_key(&descriptor.device_id) {
            return Err(RuntimeError::AlreadyRegistered(descriptor.device_id));
        }
        let instance = self.next_instance.fetch_add(1, Ordering::Relaxed);
        let id = descriptor.device_id.clone();
        devices.insert(
            id.clone(),
            Arc::new(DeviceSlot {
                descriptor,
                instance,
                registered_at: self.now(),
                inner: Mutex::new(DeviceInner {
                    binding,
                    records: VecDeque::new(),
                    active: None,
                    invocations: 0,
                }),
            }),
        );
        Ok(RegistrationHandle { device_id: id, instance })
    }

    /// All registered devices, ordered by id.
    pub fn discover(&self) -> Vec<DeviceDescriptor> {
        self.devices.read().unwrap().values().map(|s| s.descriptor.clone()).collect()
    }

    pub fn descriptor(&self, id: &DeviceId) -> Option<DeviceDescriptor> {
        self.devices.read().unwrap().get(id).map(|s| s.descriptor.clone())
    }

    pub fn device_info(&self, id: &DeviceId) -> Result<DeviceInfo, RuntimeError> {
        let slot = self.slot(id).ok_or_else(|| RuntimeError::NotFound(format!("device `{id}`")))?;
        let invocations = slot.inner.lock().unwrap().invocations;
        Ok(DeviceInfo {
            instance: slot.instance,
            registered_at: slot.registered_at,
            uptime: self.now() - slot.registered_at,
            driver_invocations: invocations,
        })
    }

    fn slot(&self, id: &DeviceId) -> Option<Arc<DeviceSlot>> {
        self.devices.read().unwrap().get(id).cloned()
    }

    fn fresh_goal_id(&self, device: &DeviceId) -> GoalId {
        let n = self.next_goal.fetch_add(1, Ordering::Relaxed);
        GoalId(format!("{device}-{n:06}"))
    }

    pub fn submit_goal(&self, device_id: &DeviceId, action_name: &str, params: Params) -> Result<GoalId, SubmitError> {
        self.submit_goal_with_id(None, device_id, action_name, params)
    }

    /// Submits a goal, optionally under a client-chosen id. Resubmitting an
    /// id with an identical request returns the existing goal without
    /// invoking the driver again.
    pub fn submit_goal_with_id(
        &self,
        goal_id: Option<GoalId>,
        device_id: &DeviceId,
        action_name: &str,
        params: Params,
    ) -> Result<GoalId, SubmitError> {
        let slot = self.slot(device_id).ok_or_else(|| SubmitError::NotFound(format!("device `{device_id}`")))?;
        let spec = slot
            .descriptor
            .action(action_name)
            .ok_or_else(|| SubmitError::NotFound(format!("action `{action_name}` on `{device_id}`")))?
            .clone();
        let mut inner = slot.inner.lock().unwrap();
        let now = self.now();

        if let Some(id) = &goal_id {
            let known = self.goal_index.read().unwrap().get(id).cloned();
            if let Some(owner) = known {
                if &owner == device_id {
                    if let Some(rec) = inner.record(id) {
                        if rec.goal.action_name == action_name && rec.goal.params == params {
                            return match rec.status.state {
                                GoalState::Rejected => Err(SubmitError::Rejected {
                                    goal_id: id.clone(),
                                    reason: reject_reason(&rec.status.result),
                                    message: rejection_message(&rec.status.result),
                                }),
                                _ => Ok(id.clone()),
                            };
                        }
                    }
                }
                return Err(SubmitError::Duplicate(id.clone()));
            }
        }
        let goal_id = goal_id.unwrap_or_else(|| self.fresh_goal_id(device_id));
        let goal = ActionGoal {
            goal_id: goal_id.clone(),
            device_id: device_id.clone(),
            action_name: action_name.to_string(),
            params: params.clone(),
            submitted_at: now,
        };
        let mut status = GoalStatus {
            goal_id: goal_id.clone(),
            device_id: device_id.clone(),
            action_name: action_name.to_string(),
            state: GoalState::Pending,
            feedback: Params::new(),
            result: Params::new(),
            updated_at: now,
        };
        self.apply(&mut status, GoalEvent::Accept, now);

        let rejection = if let Err(msg) = spec.validate_params(&params) {
            Some((RejectReason::BadParams, msg))
        } else if inner.active.is_some() {
            Some((RejectReason::Busy, format!("device `{device_id}` is executing another goal")))
        } else {
            None
        };

        let started = match rejection {
            Some((reason, message)) => Err(StartError::Rejected { reason, message }),
            None => {
                inner.invocations += 1;
                let handler = inner.binding.handler_mut(action_name).expect("handler checked at registration");
                handler(&params, now)
            }
        };

        self.goal_index.write().unwrap().insert(goal_id.clone(), device_id.clone());
        let outcome = match started {
            Ok(run) => {
                self.apply(&mut status, GoalEvent::Start, now);
                self.emit(RuntimeEvent::Status(status.clone()));
                let deadline = spec.timeout_s.map(|s| now + SimTime::from_secs_f64(s));
                inner.active = Some(Active { goal_id: goal_id.clone(), run, deadline });
                inner.records.push_back(GoalRecord { goal, status });
                self.step_device(&mut inner, now);
                Ok(goal_id)
            }
            Err(StartError::Rejected { reason, message }) => {
                status.result = rejection_result(reason, &message);
                self.apply(&mut status, GoalEvent::Reject, now);
                self.emit(RuntimeEvent::Result(status.clone()));
                inner.records.push_back(GoalRecord { goal, status });
                Err(SubmitError::Rejected { goal_id, reason, message })
            }
            Err(StartError::Failed(message)) => {
                self.apply(&mut status, GoalEvent::Start, now);
                status.result = error_result(&message);
                self.apply(&mut status, GoalEvent::Fail, now);
                self.emit(RuntimeEvent::Result(status.clone()));
                inner.records.push_back(GoalRecord { goal, status });
                Ok(goal_id)
            }
        };
        self.evict(&mut inner);
        outcome
    }

    pub fn cancel_goal(&self, goal_id: &GoalId) -> Result<CancelAck, RuntimeError> {
        let slot = self.slot_for_goal(goal_id)?;
        let mut inner = slot.inner.lock().unwrap();
        let now = self.now();
        let state = inner.record(goal_id).map(|r| r.status.state).ok_or_else(|| not_found(goal_id))?;
        let ack = |state, note: &str| CancelAck { goal_id: goal_id.clone(), state, note: Some(note.to_string()) };
        match state {
            s if s.is_terminal() => Ok(ack(s, "goal already terminal; nothing to cancel")),
            GoalState::Canceling => Ok(ack(GoalState::Canceling, "cancellation already requested")),
            _ => {
                if let Some(active) = inner.active.as_mut().filter(|a| &a.goal_id == goal_id) {
                    active.run.cancel();
                }
                let rec = inner.record_mut(goal_id).expect("record present");
                let mut status = rec.status.clone();
                self.apply(&mut status, GoalEvent::CancelRequest, now);
                inner.record_mut(goal_id).expect("record present").status = status.clone();
                self.emit(RuntimeEvent::Status(status));
                Ok(CancelAck { goal_id: goal_id.clone(), state: GoalState::Canceling, note: None })
            }
        }
    }

    pub fn poll_status(&self, goal_id: &GoalId) -> Result<GoalStatus, RuntimeError> {
        let slot = self.slot_for_goal(goal_id)?;
        let inner = slot.inner.lock().unwrap();
        inner.record(goal_id).map(|r| r.status.clone()).ok_or_else(|| not_found(goal_id))
    }

    /// The original request behind `goal_id`.
    pub fn goal(&self, goal_id: &GoalId) -> Result<ActionGoal, RuntimeError> {
        let slot = self.slot_for_goal(goal_id)?;
        let inner = slot.inner.lock().unwrap();
        inner.record(goal_id).map(|r| r.goal.clone()).ok_or_else(|| not_found(goal_id))
    }

    /// Whether `device_id` currently has a non-terminal goal.
    pub fn is_busy(&self, device_id: &DeviceId) -> bool {
        self.slot(device_id).is_some_and(|s| s.inner.lock().unwrap().active.is_some())
    }

    fn slot_for_goal(&self, goal_id: &GoalId) -> Result<Arc<DeviceSlot>, RuntimeError> {
        let device = self.goal_index.read().unwrap().get(goal_id).cloned().ok_or_else(|| not_found(goal_id))?;
        self.slot(&device).ok_or_else(|| not_found(goal_id))
    }

    /// Advances the virtual clock by `dt` and steps every device.
    pub fn advance(&self, dt: SimTime) -> SimTime {
        let now = self.clock.advance(dt);
        self.step_all(now);
        now
    }

    /// Steps every device's active goal at the current time.
    pub fn step_all(&self, now: SimTime) {
        let slots: Vec<_> = self.devices.read().unwrap().values().cloned().collect();
        for slot in slots {
            let mut inner = slot.inner.lock().unwrap();
            self.step_device(&mut inner, now);
        }
    }

    fn step_device(&self, inner: &mut DeviceInner, now: SimTime) {
        let Some(active) = inner.active.as_mut() else { return };
        let goal_id = active.goal_id.clone();
        let timed_out = active.deadline.is_some_and(|d| now >= d);
        let step = if timed_out {
            active.run.cancel();
            None
        } else {
            Some(active.run.step(now))
        };
        let rec = inner.record_mut(&goal_id).expect("active goal has a record");
        let mut status = rec.status.clone();
        let mut finished = false;
        match step {
            None => {
                if let Some(ev) = timeout_event(status.state) {
                    if ev == GoalEvent::Fail {
                        status.result = error_result("timeout");
                    }
                    self.apply(&mut status, ev, now);
                }
                finished = true;
            }
            Some(Step::Running(None)) => {}
            Some(Step::Running(Some(fb))) => {
                status.feedback = fb.clone();
                self.apply(&mut status, GoalEvent::Feedback, now);
                self.emit(RuntimeEvent::Feedback {
                    goal_id: goal_id.clone(),
                    device_id: status.device_id.clone(),
                    feedback: fb,
                });
            }
            Some(Step::Done(result)) => {
                status.result = result;
                self.apply(&mut status, GoalEvent::Succeed, now);
                finished = true;
            }
            Some(Step::Failed(msg)) => {
                status.result = error_result(&msg);
                self.apply(&mut status, GoalEvent::Fail, now);
                finished = true;
            }
            Some(Step::Canceled(result)) => {
                status.result = result;
                let ev = if status.state == GoalState::Canceling { GoalEvent::CancelDone } else { GoalEvent::Succeed };
                self.apply(&mut status, ev, now);
                finished = true;
            }
        }
        if finished {
            inner.active = None;
            self.emit(RuntimeEvent::Result(status.clone()));
        }
        inner.record_mut(&goal_id).expect("record").status = status;
        if finished {
            self.evict(inner);
        }
    }

    fn evict(&self, inner: &mut DeviceInner) {
        while inner.records.len() > GOAL_HISTORY {
            let Some(pos) = inner.records.iter().position(|r| r.status.state.is_terminal()) else { break };
            let rec = inner.records.remove(pos).expect("position valid");
            self.goal_index.write().unwrap().remove(&rec.goal.goal_id);
        }
    }

    fn apply(&self, status: &mut GoalStatus, event: GoalEvent, now: SimTime) {
        match goal_transition(status.state, event) {
            Ok(next) => {
                let changed = next != status.state;
                status.state = next;
                status.updated_at = now;
                if changed {
                    if let Some(log) = self.goal_log.lock().unwrap().as_mut() {
                        log.push(GoalLogEntry {
                            at: now,
                            goal_id: status.goal_id.clone(),
                            device_id: status.device_id.clone(),
                            action_name: status.action_name.clone(),
                            state: next,
                        });
                    }
                }
            }
            Err(e) => tracing::warn!(goal = %status.goal_id, "{e}"),
        }
    }

    fn emit(&self, event: RuntimeEvent) {
        // No subscribers is fine; pollers still see the status store.
        let _ = self.events.send(event);
    }
}

fn not_found(goal_id: &GoalId) -> RuntimeError {
    RuntimeError::NotFound(format!("goal `{goal_id}`"))
}

fn error_result(message: &str) -> Params {
    let mut p = Params::new();
    p.insert("error".into(), json!(message));
    p
}

fn rejection_result(reason: RejectReason, message: &str) -> Params {
    let mut p = Params::new();
    p.insert("reason".into(), json!(reason.as_str()));
    p.insert("message".into(), json!(message));
    p
}

/// Reads the rejection reason recorded in a REJECTED goal's result.
pub fn reject_reason(result: &Params) -> RejectReason {
    result
        .get("reason")
        .and_then(|v| v.as_str())
        .and_then(RejectReason::parse)
        .unwrap_or(RejectReason::BadParams)
}

fn rejection_message(result: &Params) -> String {
    result.get("message").and_then(|v| v.as_str()).unwrap_or_default().to_string()
}
