//! The driver contract: a handler per action that starts a cooperative,
//! step-driven run.

use std::collections::BTreeMap;

use crate::clock::SimTime;
use crate::protocol::{DeviceId, Params, RejectReason};

/// Outcome of advancing a running action to `now`.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    /// Still running; `Some` carries a progress update.
    Running(Option<Params>),
    Done(Params),
    Failed(String),
    /// Stopped after a cancellation request.
    Canceled(Params),
}

/// A started action. The runtime calls [`ActionRun::step`] at each internal
/// step boundary; cancellation is cooperative and takes effect at the next one.
pub trait ActionRun: Send {
    fn step(&mut self, now: SimTime) -> Step;

    fn cancel(&mut self);
}

#[derive(Clone, Debug, PartialEq)]
pub enum StartError {
    /// The request is refused before any motion or measurement.
    Rejected { reason: RejectReason, message: String },
    /// The driver raised while starting.
    Failed(String),
}

impl StartError {
    pub fn rejected(reason: RejectReason, message: impl Into<String>) -> StartError {
        StartError::Rejected { reason, message: message.into() }
    }
}

pub type ActionHandler =
    Box<dyn FnMut(&Params, SimTime) -> Result<Box<dyn ActionRun>, StartError> + Send>;

/// Maps each action name of one device to its handler.
pub struct DriverBinding {
    pub device_id: DeviceId,
    handlers: BTreeMap<String, ActionHandler>,
}

impl DriverBinding {
    pub fn new(device_id: DeviceId) -> DriverBinding {
        DriverBinding { device_id, handlers: BTreeMap::new() }
    }

    pub fn with_handler<F>(mut self, action: &str, handler: F) -> DriverBinding
    where
        F: FnMut(&Params, SimTime) -> Result<Box<dyn ActionRun>, StartError> + Send + 'static,
    {
        self.handlers.insert(action.to_string(), Box::new(handler));
        self
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.handlers.keys().map(String::as_str)
    }

    pub(crate) fn handler_mut(&mut self, action: &str) -> Option<&mut ActionHandler> {
        self.handlers.get_mut(action)
    }

    /// Wraps every handler so that the returned runs pass through `wrap`.
    pub fn map_runs<W>(mut self, wrap: W) -> DriverBinding
    where
        W: Fn(&str, Result<Box<dyn ActionRun>, StartError>) -> Result<Box<dyn ActionRun>, StartError>
            + Send
            + Sync
            + Clone
            + 'static,
    {
        let handlers = std::mem::take(&mut self.handlers);
        for (name, mut h) in handlers {
            let w = wrap.clone();
            let n = name.clone();
            self.handlers.insert(name, Box::new(move |p: &Params, now: SimTime| w(&n, h(p, now))));
        }
        self
    }
}

impl std::fmt::Debug for DriverBinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverBinding")
            .field("device_id", &self.device_id)
            .field("actions", &self.handlers.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// A run that completes on its first step.
pub struct Immediate(pub Option<Result<Params, String>>);

impl ActionRun for Immediate {
    fn step(&mut self, _now: SimTime) -> Step {
        match self.0.take() {
            Some(Ok(p)) => Step::Done(p),
            Some(Err(e)) => Step::Failed(e),
            None => Step::Failed("step after completion".into()),
        }
    }

    fn cancel(&mut self) {}
}

/// A run that finishes after a fixed duration with a precomputed outcome.
pub struct Timed {
    pub ends_at: SimTime,
    pub outcome: Option<Result<Params, String>>,
    pub canceled: bool,
}

impl Timed {
    pub fn new(ends_at: SimTime, outcome: Result<Params, String>) -> Timed {
        Timed { ends_at, outcome: Some(outcome), canceled: false }
    }
}

impl ActionRun for Timed {
    fn step(&mut self, now: SimTime) -> Step {
        if self.canceled {
            return Step::Canceled(Params::new());
        }
        if now < self.ends_at {
            return Step::Running(None);
        }
        match self.outcome.take() {
            Some(Ok(p)) => Step::Done(p),
            Some(Err(e)) => Step::Failed(e),
            None => Step::Failed("step after completion".into()),
        }
    }

    fn cancel(&mut self) {
        self.canceled = true;
    }
}
