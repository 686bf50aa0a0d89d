use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::broadcast;

use super::client::{ClientError, StreamClient};
use super::server::{spawn_listener, ServerHandle};
use crate::protocol::{Body, ErrorBody, ErrorCode, GoalId, Layer, StatusEventBody, StatusQueryBody};

/// The action-layer endpoint: one upstream stream client per device.
pub struct BridgeHandle {
    pub server: ServerHandle,
    upstream: BTreeMap<String, StreamClient>,
}

impl BridgeHandle {
    pub fn url(&self) -> String {
        self.server.url()
    }

    /// The embedded client for `device`, for fault injection in tests.
    pub fn upstream(&self, device: &str) -> Option<&StreamClient> {
        self.upstream.get(device)
    }

    pub async fn shutdown(self) {
        for c in self.upstream.values() {
            c.close();
        }
        self.server.shutdown().await;
    }

    pub async fn join(self) {
        self.server.join().await;
    }
}

struct Router {
    upstream: BTreeMap<String, StreamClient>,
    owners: Mutex<HashMap<GoalId, String>>,
}

impl Router {
    fn not_found(msg: String, goal_id: Option<GoalId>) -> Body {
        Body::Error(ErrorBody { in_reply_to: None, code: ErrorCode::NotFound, message: msg, goal_id })
    }

    fn unavailable(e: ClientError) -> Body {
        Body::error(None, ErrorCode::Internal, format!("device unavailable: {e}"))
    }

    /// Forwards a goal-addressed request to the device that owns the goal.
    /// Goals this bridge has not seen (after a restart, say) are looked up
    /// on every device.
    async fn by_goal(&self, goal_id: &GoalId, body: Body) -> Body {
        let owner = self.owners.lock().unwrap().get(goal_id).cloned();
        let candidates: Vec<(&String, &StreamClient)> = match &owner {
            Some(d) => self.upstream.get_key_value(d).into_iter().collect(),
            None => self.upstream.iter().collect(),
        };
        for (dev, c) in candidates {
            match c.request(body.clone()).await {
                Ok(Body::Error(e)) if e.code == ErrorCode::NotFound && owner.is_none() => continue,
                Ok(reply) => {
                    self.owners.lock().unwrap().insert(goal_id.clone(), dev.clone());
                    return reply;
                }
                Err(e) => return Router::unavailable(e),
            }
        }
        Router::not_found(format!("unknown goal `{goal_id}`"), Some(goal_id.clone()))
    }

    async fn handle(&self, body: Body) -> Body {
        match body {
            Body::Submit(s) => {
                let Some(c) = self.upstream.get(s.device_id.as_str()) else {
                    return Router::not_found(format!("unknown device `{}`", s.device_id), Some(s.goal_id));
                };
                self.owners.lock().unwrap().insert(s.goal_id.clone(), s.device_id.to_string());
                c.request(Body::Submit(s)).await.unwrap_or_else(Router::unavailable)
            }
            Body::Cancel(c) => {
                let id = c.goal_id.clone();
                self.by_goal(&id, Body::Cancel(c)).await
            }
            Body::StatusQuery(StatusQueryBody { goal_id: Some(id) }) => {
                self.by_goal(&id, Body::StatusQuery(StatusQueryBody { goal_id: Some(id.clone()) })).await
            }
            Body::StatusQuery(StatusQueryBody { goal_id: None }) => {
                let mut all = Vec::new();
                for c in self.upstream.values() {
                    match c.discover().await {
                        Ok(d) => all.extend(d),
                        Err(e) => return Router::unavailable(e),
                    }
                }
                Body::StatusEvent(StatusEventBody { devices: Some(all), ..Default::default() })
            }
            other => Body::error(None, ErrorCode::Protocol, format!("clients may not send {}", other.kind())),
        }
    }
}

/// Starts the bridge on `listener`, connecting to each `(device, url)`
/// stream endpoint within `patience`.
pub async fn run_bridge(
    listener: TcpListener,
    endpoints: &[(String, String)],
    patience: Duration,
) -> Result<BridgeHandle, ClientError> {
    let mut upstream = BTreeMap::new();
    for (dev, url) in endpoints {
        upstream.insert(dev.clone(), StreamClient::connect(url, Layer::Stream, patience).await?);
    }
    let (events, _) = broadcast::channel(4096);
    for c in upstream.values() {
        let mut sub = c.subscribe();
        let tx = events.clone();
        tokio::spawn(async move {
            loop {
                match sub.recv().await {
                    // Replies went to whoever asked; only pushed events fan out.
                    Ok(m) if m.body.in_reply_to().is_none() => {
                        let _ = tx.send(m.body);
                    }
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        });
    }
    let router = Arc::new(Router { upstream: upstream.clone(), owners: Mutex::new(HashMap::new()) });
    let server = spawn_listener(listener, Layer::Action, events, move |body| {
        let r = router.clone();
        async move { r.handle(body).await }
    });
    Ok(BridgeHandle { server, upstream })
}
