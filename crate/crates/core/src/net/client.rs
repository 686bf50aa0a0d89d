use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};
use tracing::debug;

use super::{from_frame, to_frame};
use crate::protocol::{
    Body, CancelBody, DeviceDescriptor, DeviceId, ErrorCode, GoalId, GoalStatus, Layer, Params, SeqTracker,
    StatusQueryBody, SubmitBody, WireMessage,
};
use crate::clock::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("client closed")]
    Closed,
    #[error("could not connect to {0}")]
    Unreachable(String),
    #[error("{code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

enum Cmd {
    Request(Body, oneshot::Sender<Body>),
    Sever,
    Close,
}

struct Shared {
    statuses: Mutex<HashMap<GoalId, GoalStatus>>,
    events: broadcast::Sender<WireMessage>,
    connections: AtomicU64,
    seq_errors: AtomicU64,
}

impl Shared {
    /// Folds any goal information in `body` into the cache. Terminal states
    /// are absorbing, so a late non-terminal snapshot never overwrites one.
    fn absorb(&self, body: &Body) {
        let mut st = self.statuses.lock().unwrap();
        match body {
            Body::StatusEvent(b) => {
                if let Some(g) = &b.goal {
                    let keep = st.get(&g.goal_id).is_some_and(|old| old.state.is_terminal());
                    if !keep {
                        st.insert(g.goal_id.clone(), g.clone());
                    }
                }
            }
            Body::ResultEvent(r) => {
                let e = st.entry(r.goal_id.clone()).or_insert_with(|| GoalStatus {
                    goal_id: r.goal_id.clone(),
                    device_id: r.device_id.clone(),
                    action_name: String::new(),
                    state: r.state,
                    feedback: Params::new(),
                    result: Params::new(),
                    updated_at: SimTime::ZERO,
                });
                if !e.state.is_terminal() || e.result.is_empty() {
                    e.state = r.state;
                    e.result = r.result.clone();
                }
            }
            Body::FeedbackEvent(f) => {
                if let Some(e) = st.get_mut(&f.goal_id) {
                    if !e.state.is_terminal() {
                        e.feedback = f.feedback.clone();
                    }
                }
            }
            _ => {}
        }
    }
}

/// Reconnecting protocol client. Requests still unanswered when the
/// connection drops are re-sent after reconnecting; servers treat a repeated
/// SUBMIT with the same goal id as the same goal, so nothing runs twice.
#[derive(Clone)]
pub struct StreamClient {
    layer: Layer,
    shared: Arc<Shared>,
    cmd: mpsc::UnboundedSender<Cmd>,
}

impl StreamClient {
    /// Connects, retrying for up to `patience`.
    pub async fn connect(url: &str, layer: Layer, patience: Duration) -> Result<StreamClient, ClientError> {
        let deadline = tokio::time::Instant::now() + patience;
        let mut wait = Duration::from_millis(20);
        let first = loop {
            match tokio_tungstenite::connect_async(url).await {
                Ok((ws, _)) => break ws,
                Err(e) => {
                    if tokio::time::Instant::now() + wait > deadline {
                        debug!("connect {url}: {e}");
                        return Err(ClientError::Unreachable(url.to_string()));
                    }
                    tokio::time::sleep(wait).await;
                    wait = (wait * 2).min(Duration::from_millis(500));
                }
            }
        };
        let (events, _) = broadcast::channel(4096);
        let shared = Arc::new(Shared {
            statuses: Mutex::new(HashMap::new()),
            events,
            connections: AtomicU64::new(0),
            seq_errors: AtomicU64::new(0),
        });
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(drive(url.to_string(), layer, shared.clone(), rx, first));
        Ok(StreamClient { layer, shared, cmd: tx })
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    /// Sends one request and waits for the message that answers it.
    pub async fn request(&self, body: Body) -> Result<Body, ClientError> {
        let (tx, rx) = oneshot::channel();
        self.cmd.send(Cmd::Request(body, tx)).map_err(|_| ClientError::Closed)?;
        rx.await.map_err(|_| ClientError::Closed)
    }

    /// Submits a goal; the reply is its first snapshot (REJECTED for a
    /// rejection).
    pub async fn submit(&self, goal_id: GoalId, device: &str, action: &str, params: Params) -> Result<GoalStatus, ClientError> {
        let body = Body::Submit(SubmitBody { goal_id: goal_id.clone(), device_id: DeviceId::new(device), action_name: action.into(), params });
        let reply = self.request(body).await?;
        self.goal_reply(&goal_id, reply)
    }

    pub async fn cancel(&self, goal_id: &GoalId) -> Result<Option<GoalStatus>, ClientError> {
        match self.request(Body::Cancel(CancelBody { goal_id: goal_id.clone() })).await? {
            Body::StatusEvent(b) => Ok(b.goal),
            other => Err(reply_error(other)),
        }
    }

    pub async fn query(&self, goal_id: &GoalId) -> Result<GoalStatus, ClientError> {
        let reply = self.request(Body::StatusQuery(StatusQueryBody { goal_id: Some(goal_id.clone()) })).await?;
        self.goal_reply(goal_id, reply)
    }

    pub async fn discover(&self) -> Result<Vec<DeviceDescriptor>, ClientError> {
        match self.request(Body::StatusQuery(StatusQueryBody::default())).await? {
            Body::StatusEvent(b) => b.devices.ok_or_else(|| ClientError::Unexpected("no device list".into())),
            other => Err(reply_error(other)),
        }
    }

    fn goal_reply(&self, goal_id: &GoalId, reply: Body) -> Result<GoalStatus, ClientError> {
        match reply {
            Body::StatusEvent(_) | Body::ResultEvent(_) => {
                self.cached(goal_id).ok_or_else(|| ClientError::Unexpected("reply without goal".into()))
            }
            other => Err(reply_error(other)),
        }
    }

    /// Latest known status, from replies and pushed events.
    pub fn cached(&self, goal_id: &GoalId) -> Option<GoalStatus> {
        self.shared.statuses.lock().unwrap().get(goal_id).cloned()
    }

    /// Waits until the goal is terminal, polling as a fallback to events.
    pub async fn wait_terminal(&self, goal_id: &GoalId, poll: Duration) -> Result<GoalStatus, ClientError> {
        let mut events = self.shared.events.subscribe();
        loop {
            if let Some(s) = self.cached(goal_id).filter(|s| s.state.is_terminal()) {
                return Ok(s);
            }
            tokio::select! {
                _ = events.recv() => {}
                _ = tokio::time::sleep(poll) => {
                    self.query(goal_id).await?;
                }
            }
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<WireMessage> {
        self.shared.events.subscribe()
    }

    /// Drops the transport as a network failure would; the client
    /// reconnects on its own.
    pub fn sever(&self) {
        let _ = self.cmd.send(Cmd::Sever);
    }

    pub fn close(&self) {
        let _ = self.cmd.send(Cmd::Close);
    }

    /// Connections made so far, the first included.
    pub fn connections(&self) -> u64 {
        self.shared.connections.load(Ordering::SeqCst)
    }

    /// Inbound sequence regressions seen (and dropped).
    pub fn seq_errors(&self) -> u64 {
        self.shared.seq_errors.load(Ordering::SeqCst)
    }
}

fn reply_error(body: Body) -> ClientError {
    match body {
        Body::Error(e) => ClientError::Remote { code: e.code, message: e.message },
        other => ClientError::Unexpected(other.kind().to_string()),
    }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn drive(url: String, layer: Layer, shared: Arc<Shared>, mut cmds: mpsc::UnboundedReceiver<Cmd>, first: Ws) {
    let mut pending: BTreeMap<u64, (Body, oneshot::Sender<Body>)> = BTreeMap::new();
    let mut next_req = 0u64;
    let mut ws = Some(first);
    loop {
        let conn = match ws.take() {
            Some(c) => c,
            None => {
                // Reconnect, queueing requests meanwhile.
                let mut wait = Duration::from_millis(20);
                loop {
                    match tokio_tungstenite::connect_async(url.as_str()).await {
                        Ok((c, _)) => break c,
                        Err(e) => debug!("reconnect {url}: {e}"),
                    }
                    let sleep = tokio::time::sleep(wait);
                    tokio::pin!(sleep);
                    loop {
                        tokio::select! {
                            _ = &mut sleep => break,
                            c = cmds.recv() => match c {
                                Some(Cmd::Request(b, tx)) => {
                                    pending.insert(next_req, (b, tx));
                                    next_req += 1;
                                }
                                Some(Cmd::Sever) => {}
                                None | Some(Cmd::Close) => return,
                            },
                        }
                    }
                    wait = (wait * 2).min(Duration::from_millis(500));
                }
            }
        };
        shared.connections.fetch_add(1, Ordering::SeqCst);
        let (mut sink, mut source) = conn.split();
        let mut seq = SeqTracker::new();
        let mut by_seq: HashMap<u64, u64> = HashMap::new();
        let mut ok = true;
        for (rid, (body, _)) in pending.iter() {
            let s = seq.next_outbound();
            by_seq.insert(s, *rid);
            let Ok(frame) = to_frame(&WireMessage::new(layer, s, body.clone())) else { continue };
            if sink.send(frame).await.is_err() {
                ok = false;
                break;
            }
        }
        while ok {
            tokio::select! {
                c = cmds.recv() => match c {
                    None | Some(Cmd::Close) => {
                        let _ = sink.close().await;
                        return;
                    }
                    Some(Cmd::Sever) => break,
                    Some(Cmd::Request(body, tx)) => {
                        let rid = next_req;
                        next_req += 1;
                        let s = seq.next_outbound();
                        match to_frame(&WireMessage::new(layer, s, body.clone())) {
                            Ok(frame) => {
                                by_seq.insert(s, rid);
                                pending.insert(rid, (body, tx));
                                if sink.send(frame).await.is_err() {
                                    break;
                                }
                            }
                            Err(e) => {
                                let _ = tx.send(Body::error(None, ErrorCode::Protocol, e.to_string()));
                            }
                        }
                    }
                },
                m = source.next() => {
                    let Some(Ok(m)) = m else { break };
                    if m.is_close() {
                        break;
                    }
                    let Some(Ok(msg)) = from_frame(&m) else { continue };
                    if seq.check_inbound(msg.seq).is_err() {
                        shared.seq_errors.fetch_add(1, Ordering::SeqCst);
                        continue;
                    }
                    shared.absorb(&msg.body);
                    if let Some(rid) = msg.body.in_reply_to().and_then(|s| by_seq.remove(&s)) {
                        if let Some((_, tx)) = pending.remove(&rid) {
                            let _ = tx.send(msg.body.clone());
                        }
                    }
                    let _ = shared.events.send(msg);
                }
            }
        }
    }
}
