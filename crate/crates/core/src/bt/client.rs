use std::sync::Arc;

use crate::clock::SimTime;
use crate::protocol::{DeviceId, GoalId, GoalStatus, Params};
use crate::runtime::{Runtime, SubmitError};

/// What action leaves need from the device side. Implementations must not
/// block on goal completion.
pub trait ActionClient {
    /// Submits a goal. A rejection still yields a goal id whose status is
    /// REJECTED; `Err` means the request never reached a device.
    fn submit(&mut self, device: &str, action: &str, params: Params) -> Result<GoalId, String>;

    /// Latest known status, `None` if not yet known.
    fn status(&mut self, goal: &GoalId) -> Option<GoalStatus>;

    fn cancel(&mut self, goal: &GoalId);

    fn now(&self) -> SimTime;

    /// Lets `dt` of time pass and returns the new time.
    fn advance(&mut self, dt: SimTime) -> SimTime;

    fn devices(&mut self) -> Vec<String>;
}

/// In-process client over a [`Runtime`] sharing its virtual clock.
pub struct LocalClient {
    pub runtime: Arc<Runtime>,
    /// Sleep through each `advance` so virtual time follows the wall clock.
    pub realtime: bool,
}

impl LocalClient {
    pub fn new(runtime: Arc<Runtime>) -> LocalClient {
        LocalClient { runtime, realtime: false }
    }
}

impl ActionClient for LocalClient {
    fn submit(&mut self, device: &str, action: &str, params: Params) -> Result<GoalId, String> {
        match self.runtime.submit_goal(&DeviceId::new(device), action, params) {
            Ok(id) => Ok(id),
            Err(SubmitError::Rejected { goal_id, .. }) => Ok(goal_id),
            Err(e) => Err(e.to_string()),
        }
    }

    fn status(&mut self, goal: &GoalId) -> Option<GoalStatus> {
        self.runtime.poll_status(goal).ok()
    }

    fn cancel(&mut self, goal: &GoalId) {
        let _ = self.runtime.cancel_goal(goal);
    }

    fn now(&self) -> SimTime {
        self.runtime.now()
    }

    fn advance(&mut self, dt: SimTime) -> SimTime {
        if self.realtime {
            std::thread::sleep(std::time::Duration::from_secs_f64(dt.as_secs_f64()));
        }
        self.runtime.advance(dt)
    }

    fn devices(&mut self) -> Vec<String> {
        self.runtime.discover().into_iter().map(|d| d.device_id.0).collect()
    }
}
