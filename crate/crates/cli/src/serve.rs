use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use gantrylab_core::config::RuntimeConfig;
use gantrylab_core::net::{run_bridge, serve_device};
use gantrylab_core::sim::{FaultInjector, CAMERA, GANTRY, LIBS};
use tokio::net::TcpListener;

const PATIENCE: Duration = Duration::from_secs(30);

fn tokio_rt() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?)
}

async fn listen(host: &str, port: u16) -> Result<TcpListener> {
    TcpListener::bind((host, port)).await.with_context(|| format!("bind {host}:{port}"))
}

fn device_index(name: &str) -> u64 {
    [GANTRY, LIBS, CAMERA].iter().position(|d| *d == name).unwrap_or(0) as u64
}

/// Serves one device until the process is killed.
pub fn device(cfg: &RuntimeConfig, name: &str) -> Result<()> {
    let port = *cfg.network.devices.get(name).with_context(|| format!("no port configured for device `{name}`"))?;
    let spec = cfg.world_spec()?;
    let faults = (cfg.faults.probability > 0.0)
        .then(|| FaultInjector::new(cfg.faults.probability, cfg.faults.seed.wrapping_add(device_index(name))));
    let gantry_url = cfg.network.endpoint(GANTRY);
    tokio_rt()?.block_on(async {
        let listener = listen(&cfg.network.host, port).await?;
        let server =
            serve_device(&spec, faults.as_ref(), name, listener, gantry_url.as_deref(), cfg.network.time_scale, PATIENCE)
                .await?;
        println!("ready {name} {}", server.url());
        server.server.join().await;
        Ok(())
    })
}

/// Serves the bridge until the process is killed.
pub fn bridge(cfg: &RuntimeConfig) -> Result<()> {
    let endpoints: Vec<(String, String)> =
        cfg.network.devices.keys().map(|d| (d.clone(), cfg.network.endpoint(d).expect("configured"))).collect();
    tokio_rt()?.block_on(async {
        let listener = listen(&cfg.network.host, cfg.network.bridge_port).await?;
        let b = run_bridge(listener, &endpoints, PATIENCE).await?;
        println!("ready bridge {}", b.url());
        b.join().await;
        Ok(())
    })
}

/// Exits the process once stdin reaches EOF, which happens when the parent
/// holding the pipe dies, however it dies.
pub fn exit_on_stdin_eof() {
    std::thread::spawn(|| {
        let mut buf = [0u8; 64];
        let mut stdin = std::io::stdin();
        while matches!(stdin.read(&mut buf), Ok(n) if n > 0) {}
        std::process::exit(0);
    });
}

/// Starts each device and the bridge as child processes of this binary and
/// waits; when one exits the rest are stopped.
pub fn serve_all(config: Option<&Path>) -> Result<()> {
    let exe = std::env::current_exe().context("locating this executable")?;
    let spawn = |args: &[&str]| -> Result<Child> {
        let mut cmd = Command::new(&exe);
        if let Some(c) = config {
            cmd.arg("--config").arg(c);
        }
        cmd.arg("--exit-with-parent").stdin(Stdio::piped());
        cmd.args(args).spawn().with_context(|| format!("spawning {}", args.join(" ")))
    };
    let mut children: Vec<(String, Child)> = Vec::new();
    for d in [GANTRY, LIBS, CAMERA] {
        children.push((d.to_string(), spawn(&["device", d])?));
    }
    children.push(("bridge".into(), spawn(&["bridge"])?));
    let result = loop {
        std::thread::sleep(Duration::from_millis(200));
        let mut exited = None;
        for (name, c) in children.iter_mut() {
            if let Some(status) = c.try_wait()? {
                exited = Some((name.clone(), status));
                break;
            }
        }
        if let Some(e) = exited {
            break e;
        }
    };
    for (_, c) in children.iter_mut() {
        let _ = c.kill();
        let _ = c.wait();
    }
    bail!("{} exited ({})", result.0, result.1)
}
