use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::client::{ClientError, StreamClient};
use crate::bt::ActionClient;
use crate::clock::SimTime;
use crate::protocol::{ErrorCode, GoalId, GoalStatus, Layer, Params};

/// Blocking [`ActionClient`] over the bridge, for running behavior trees
/// against device processes. Time is the wall clock scaled by
/// `time_scale`, matching the devices' tickers.
pub struct RemoteClient {
    rt: tokio::runtime::Runtime,
    client: StreamClient,
    time_scale: f64,
    start: Instant,
    prefix: String,
    next: u64,
    last_query: HashMap<GoalId, Instant>,
    pub request_timeout: Duration,
    /// Non-terminal goals are re-queried this often in case an event was
    /// missed across a reconnect.
    pub poll_interval: Duration,
}

impl RemoteClient {
    pub fn connect(url: &str, time_scale: f64, patience: Duration) -> Result<RemoteClient, ClientError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .expect("tokio runtime");
        let client = rt.block_on(StreamClient::connect(url, Layer::Action, patience))?;
        // Goal ids must stay unique across client restarts against the same
        // device processes.
        let prefix = format!("bt-{:08x}", rand::random::<u32>());
        Ok(RemoteClient {
            rt,
            client,
            time_scale,
            start: Instant::now(),
            prefix,
            next: 0,
            last_query: HashMap::new(),
            request_timeout: Duration::from_secs(30),
            poll_interval: Duration::from_millis(500),
        })
    }

    pub fn stream(&self) -> &StreamClient {
        &self.client
    }

    fn block<T>(&self, f: impl std::future::Future<Output = Result<T, ClientError>>) -> Result<T, String> {
        match self.rt.block_on(async { tokio::time::timeout(self.request_timeout, f).await }) {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(_) => Err("request timed out".into()),
        }
    }
}

impl ActionClient for RemoteClient {
    fn submit(&mut self, device: &str, action: &str, params: Params) -> Result<GoalId, String> {
        self.next += 1;
        let id = GoalId::new(format!("{}-{}", self.prefix, self.next));
        let c = self.client.clone();
        let gid = id.clone();
        let (device, action) = (device.to_string(), action.to_string());
        self.block(async move { c.submit(gid, &device, &action, params).await })?;
        self.last_query.insert(id.clone(), Instant::now());
        Ok(id)
    }

    fn status(&mut self, goal: &GoalId) -> Option<GoalStatus> {
        let cached = self.client.cached(goal);
        if cached.as_ref().is_some_and(|s| s.state.is_terminal()) {
            self.last_query.remove(goal);
            return cached;
        }
        let stale = self.last_query.get(goal).is_none_or(|t| t.elapsed() >= self.poll_interval);
        if stale {
            self.last_query.insert(goal.clone(), Instant::now());
            let c = self.client.clone();
            let g = goal.clone();
            match self.block(async move { c.query(&g).await }) {
                Ok(s) => return Some(s),
                Err(e) => tracing::debug!("status of {goal}: {e}"),
            }
        }
        self.client.cached(goal).or(cached)
    }

    fn cancel(&mut self, goal: &GoalId) {
        let c = self.client.clone();
        let g = goal.clone();
        if let Err(e) = self.block(async move {
            match c.cancel(&g).await {
                Err(ClientError::Remote { code: ErrorCode::NotFound, .. }) => Ok(None),
                r => r,
            }
        }) {
            tracing::warn!("cancel {goal}: {e}");
        }
    }

    fn now(&self) -> SimTime {
        SimTime::from_secs_f64(self.start.elapsed().as_secs_f64() * self.time_scale)
    }

    fn advance(&mut self, dt: SimTime) -> SimTime {
        std::thread::sleep(Duration::from_secs_f64(dt.as_secs_f64() / self.time_scale));
        self.now()
    }

    fn devices(&mut self) -> Vec<String> {
        let c = self.client.clone();
        match self.block(async move { c.discover().await }) {
            Ok(d) => d.into_iter().map(|d| d.device_id.0).collect(),
            Err(e) => {
                tracing::warn!("discovery failed: {e}");
                Vec::new()
            }
        }
    }
}

impl Drop for RemoteClient {
    fn drop(&mut self) {
        self.client.close();
    }
}
