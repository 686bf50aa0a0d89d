use tokio::sync::broadcast;
use tokio::task::JoinHandle;

use super::client::StreamClient;
use crate::protocol::{Body, GoalState, Params, StatusEventBody};
use crate::sim::SharedGantry;

fn position(p: &Params) -> Option<[f64; 3]> {
    let a = p.get("position")?.as_array()?;
    if a.len() != 3 {
        return None;
    }
    Some([a[0].as_f64()?, a[1].as_f64()?, a[2].as_f64()?])
}

/// Keeps a local copy of the gantry state current from the gantry's event
/// stream. The analyzer runs in its own process and needs to know where the
/// head is and whether it is moving.
pub fn mirror_gantry(gantry_events: &StreamClient, local: SharedGantry) -> JoinHandle<()> {
    let mut sub = gantry_events.subscribe();
    tokio::spawn(async move {
        loop {
            let msg = match sub.recv().await {
                Ok(m) => m,
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            };
            let mut g = local.lock().unwrap();
            match msg.body {
                Body::StatusEvent(StatusEventBody { goal: Some(s), .. }) => {
                    if s.state == GoalState::Active {
                        g.moving = true;
                    }
                    if s.state.is_terminal() {
                        g.moving = false;
                        if let Some(p) = position(&s.result) {
                            g.position = p;
                        }
                    }
                }
                Body::FeedbackEvent(f) => {
                    if let Some(p) = position(&f.feedback) {
                        g.position = p;
                    }
                }
                Body::ResultEvent(r) => {
                    g.moving = false;
                    if let Some(p) = position(&r.result) {
                        g.position = p;
                    }
                }
                _ => {}
            }
        }
    })
}
