use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::{from_frame, to_frame};
use crate::clock::SimTime;
use crate::protocol::{
    Body, ErrorBody, ErrorCode, FeedbackBody, Layer, ResultBody, SeqTracker, StatusEventBody, WireMessage,
};
use crate::runtime::{Runtime, RuntimeEvent, SubmitError};

/// A running listener. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub(crate) fn new(addr: SocketAddr, shutdown: watch::Sender<bool>, task: JoinHandle<()>) -> ServerHandle {
        ServerHandle { addr, shutdown, task }
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }

    /// Resolves when the server stops on its own.
    pub async fn join(self) {
        let _ = self.task.await;
    }
}

pub(crate) fn event_body(ev: RuntimeEvent) -> Body {
    match ev {
        RuntimeEvent::Status(s) => Body::StatusEvent(StatusEventBody { goal: Some(s), ..Default::default() }),
        RuntimeEvent::Feedback { goal_id, device_id, feedback } => {
            Body::FeedbackEvent(FeedbackBody { goal_id, device_id, feedback })
        }
        RuntimeEvent::Result(s) => Body::ResultEvent(ResultBody {
            in_reply_to: None,
            goal_id: s.goal_id,
            device_id: s.device_id,
            state: s.state,
            result: s.result,
        }),
    }
}

fn not_found(message: String, goal_id: Option<crate::protocol::GoalId>) -> Body {
    Body::Error(ErrorBody { in_reply_to: None, code: ErrorCode::NotFound, message, goal_id })
}

/// Answers one client request against a local runtime.
pub(crate) fn handle_request(rt: &Runtime, body: Body) -> Body {
    match body {
        Body::Submit(s) => {
            let gid = s.goal_id.clone();
            match rt.submit_goal_with_id(Some(s.goal_id), &s.device_id, &s.action_name, s.params) {
                Ok(id) => match rt.poll_status(&id) {
                    Ok(st) => Body::StatusEvent(StatusEventBody { goal: Some(st), ..Default::default() }),
                    Err(e) => not_found(e.to_string(), Some(id)),
                },
                Err(SubmitError::Rejected { goal_id, .. }) => match rt.poll_status(&goal_id) {
                    Ok(st) => event_body(RuntimeEvent::Result(st)),
                    Err(e) => not_found(e.to_string(), Some(goal_id)),
                },
                Err(SubmitError::NotFound(m)) => not_found(m, Some(gid)),
                Err(e @ SubmitError::Duplicate(_)) => {
                    Body::Error(ErrorBody { in_reply_to: None, code: ErrorCode::Duplicate, message: e.to_string(), goal_id: Some(gid) })
                }
            }
        }
        Body::Cancel(c) => match rt.cancel_goal(&c.goal_id) {
            Ok(ack) => Body::StatusEvent(StatusEventBody { goal: rt.poll_status(&c.goal_id).ok(), note: ack.note, ..Default::default() }),
            Err(e) => not_found(e.to_string(), Some(c.goal_id)),
        },
        Body::StatusQuery(q) => match q.goal_id {
            None => Body::StatusEvent(StatusEventBody { devices: Some(rt.discover()), ..Default::default() }),
            Some(id) => match rt.poll_status(&id) {
                Ok(st) => Body::StatusEvent(StatusEventBody { goal: Some(st), ..Default::default() }),
                Err(e) => not_found(e.to_string(), Some(id)),
            },
        },
        other => Body::error(None, ErrorCode::Protocol, format!("clients may not send {}", other.kind())),
    }
}

/// Serves one WebSocket connection: requests are answered in order through
/// `handler`, and every body from `events` is pushed to the client.
pub(crate) async fn run_connection<H, F>(
    stream: TcpStream,
    layer: Layer,
    mut events: broadcast::Receiver<Body>,
    mut handler: H,
    mut shutdown: watch::Receiver<bool>,
) where
    H: FnMut(Body) -> F,
    F: Future<Output = Body>,
{
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let mut seq = SeqTracker::new();
    macro_rules! send {
        ($body:expr) => {{
            let msg = WireMessage::new(layer, seq.next_outbound(), $body);
            let frame = match to_frame(&msg) {
                Ok(f) => f,
                Err(e) => {
                    warn!("dropping unencodable {}: {e}", msg.kind());
                    continue;
                }
            };
            if sink.send(frame).await.is_err() {
                break;
            }
        }};
    }
    loop {
        tokio::select! {
            m = source.next() => {
                let m = match m {
                    Some(Ok(m)) => m,
                    _ => break,
                };
                if m.is_close() {
                    break;
                }
                let msg = match from_frame(&m) {
                    None => continue,
                    Some(Err(e)) => {
                        send!(Body::error(None, ErrorCode::Protocol, e.to_string()));
                        continue;
                    }
                    Some(Ok(msg)) => msg,
                };
                if let Err(e) = seq.check_inbound(msg.seq) {
                    send!(Body::error(Some(msg.seq), ErrorCode::Protocol, e.to_string()));
                    continue;
                }
                if msg.layer != layer {
                    send!(Body::error(Some(msg.seq), ErrorCode::Protocol, format!("this endpoint speaks the {layer:?} layer")));
                    continue;
                }
                let mut reply = handler(msg.body).await;
                reply.set_in_reply_to(Some(msg.seq));
                send!(reply);
            }
            ev = events.recv() => match ev {
                Ok(body) => send!(body),
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("client lagged by {n} events"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            _ = shutdown.changed() => break,
        }
    }
    let _ = sink.close().await;
}

/// Accepts connections until shut down, handing each to `run_connection`.
pub(crate) fn spawn_listener<H, F>(listener: TcpListener, layer: Layer, events: broadcast::Sender<Body>, handler: H) -> ServerHandle
where
    H: Fn(Body) -> F + Clone + Send + 'static,
    F: Future<Output = Body> + Send + 'static,
{
    let addr = listener.local_addr().expect("bound listener");
    let (tx, rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let mut stop = rx.clone();
        let mut conns = Vec::new();
        loop {
            tokio::select! {
                acc = listener.accept() => match acc {
                    Ok((stream, _)) => {
                        let _ = stream.set_nodelay(true);
                        let h = handler.clone();
                        conns.push(tokio::spawn(run_connection(stream, layer, events.subscribe(), h, rx.clone())));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
                _ = stop.changed() => break,
            }
        }
        for c in conns {
            let _ = c.await;
        }
    });
    ServerHandle::new(addr, tx, task)
}

/// Serves `runtime` on the stream layer.
pub async fn serve_runtime(runtime: Arc<Runtime>, listener: TcpListener) -> ServerHandle {
    let (events, _) = broadcast::channel(4096);
    let mut sub = runtime.subscribe();
    let fwd = events.clone();
    tokio::spawn(async move {
        loop {
            match sub.recv().await {
                Ok(ev) => {
                    let _ = fwd.send(event_body(ev));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });
    spawn_listener(listener, Layer::Stream, events, move |body| {
        let rt = runtime.clone();
        async move { handle_request(&rt, body) }
    })
}

/// Advances `runtime`'s clock in step with the wall clock, `time_scale`
/// virtual seconds per wall second.
pub fn spawn_ticker(runtime: Arc<Runtime>, time_scale: f64, period: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let start = Instant::now();
        let base = runtime.now();
        let mut iv = tokio::time::interval(period);
        iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            iv.tick().await;
            let target = base + SimTime::from_secs_f64(start.elapsed().as_secs_f64() * time_scale);
            let now = runtime.now();
            if target > now {
                runtime.advance(target - now);
            }
        }
    })
}
