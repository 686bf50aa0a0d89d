use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::client::{ClientError, StreamClient};
use super::mirror::mirror_gantry;
use super::server::{serve_runtime, spawn_ticker, ServerHandle};
use crate::clock::VirtualClock;
use crate::protocol::Layer;
use crate::runtime::{Runtime, RuntimeError};
use crate::sim::{FaultInjector, SimWorld, WorldSpec, LIBS};

#[derive(Debug, Error)]
pub enum DeviceServeError {
    #[error("unknown device `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("gantry feed: {0}")]
    Gantry(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("the analyzer needs the gantry endpoint")]
    NoGantry,
}

/// One simulated device served on its own runtime and clock.
pub struct DeviceServer {
    pub runtime: Arc<Runtime>,
    pub server: ServerHandle,
    ticker: JoinHandle<()>,
    mirror: Option<(StreamClient, JoinHandle<()>)>,
}

impl DeviceServer {
    pub fn url(&self) -> String {
        self.server.url()
    }

    pub async fn shutdown(self) {
        self.ticker.abort();
        if let Some((c, task)) = self.mirror {
            c.close();
            task.abort();
        }
        self.server.shutdown().await;
    }
}

/// Serves device `name` of the world `spec` on `listener`. The analyzer
/// follows the gantry over `gantry_url`.
pub async fn serve_device(
    spec: &WorldSpec,
    faults: Option<&FaultInjector>,
    name: &str,
    listener: TcpListener,
    gantry_url: Option<&str>,
    time_scale: f64,
    patience: Duration,
) -> Result<DeviceServer, DeviceServeError> {
    let world = SimWorld::new(spec);
    let endpoint = format!("ws://{}", listener.local_addr()?);
    let (desc, mut binding) = world.device(name, &endpoint).ok_or_else(|| DeviceServeError::Unknown(name.to_string()))?;
    if let Some(f) = faults {
        binding = f.wrap(binding);
    }
    let mirror = if name == LIBS {
        let url = gantry_url.ok_or(DeviceServeError::NoGantry)?;
        let c = StreamClient::connect(url, Layer::Stream, patience).await?;
        let task = mirror_gantry(&c, world.gantry.clone());
        Some((c, task))
    } else {
        None
    };
    let runtime = Arc::new(Runtime::new(Arc::new(VirtualClock::new())));
    runtime.register_device(desc, binding)?;
    let server = serve_runtime(runtime.clone(), listener).await;
    let ticker = spawn_ticker(runtime.clone(), time_scale, Duration::from_millis(2));
    Ok(DeviceServer { runtime, server, ticker, mirror })
}
