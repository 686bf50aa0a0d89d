use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use gantrylab_core::bt::ActionClient;
use gantrylab_core::net::{run_bridge, serve_device, serve_runtime, spawn_ticker, DeviceServer, RemoteClient, StreamClient};
use gantrylab_core::protocol::{decode_message, encode_message, Body, ErrorCode, GoalState, Layer, Params, StatusQueryBody, WireMessage};
use gantrylab_core::scan::{plan_grid, run_scan, ScanOptions, ScanOutcome, ScanPlan};
use gantrylab_core::sim::{LineDb, SimWorld, WorldSpec, CAMERA, GANTRY, LIBS};
use gantrylab_core::spectral::ReductionConfig;
use gantrylab_core::{DeviceId, GoalId};
use proptest::prelude::*;
use serde_json::json;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

const PATIENCE: Duration = Duration::from_secs(5);

fn params(v: serde_json::Value) -> Params {
    serde_json::from_value(v).unwrap()
}

async fn bind() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").await.unwrap()
}

async fn devices(spec: &WorldSpec, time_scale: f64) -> Vec<DeviceServer> {
    let gantry = serve_device(spec, None, GANTRY, bind().await, None, time_scale, PATIENCE).await.unwrap();
    let gurl = gantry.url();
    let libs = serve_device(spec, None, LIBS, bind().await, Some(&gurl), time_scale, PATIENCE).await.unwrap();
    let camera = serve_device(spec, None, CAMERA, bind().await, None, time_scale, PATIENCE).await.unwrap();
    vec![gantry, libs, camera]
}

fn endpoints(d: &[DeviceServer]) -> Vec<(String, String)> {
    [GANTRY, LIBS, CAMERA].iter().zip(d).map(|(n, s)| (n.to_string(), s.url())).collect()
}

/// Result params without the acquisition timestamp, which depends on
/// wall-clock timing.
fn comparable(mut p: Params) -> Params {
    if let Some(m) = p.get_mut("meta").and_then(|m| m.as_object_mut()) {
        m.remove("acquired_at");
    }
    p
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_goal_runs_to_completion() {
    let (rt, _w) = SimWorld::in_process(&WorldSpec::demo(3), None).unwrap();
    let server = serve_runtime(rt.clone(), bind().await).await;
    let _ticker = spawn_ticker(rt.clone(), 50.0, Duration::from_millis(2));
    let c = StreamClient::connect(&server.url(), Layer::Stream, PATIENCE).await.unwrap();

    let found: BTreeSet<String> = c.discover().await.unwrap().into_iter().map(|d| d.device_id.0).collect();
    assert_eq!(found, ["camera", "gantry", "libs"].into_iter().map(String::from).collect());

    let id = GoalId::new("t-1");
    let first = c.submit(id.clone(), "gantry", "move", params(json!({"x": 10.0, "y": 20.0, "z": 30.0}))).await.unwrap();
    assert!(!first.state.is_terminal());
    let done = c.wait_terminal(&id, Duration::from_millis(100)).await.unwrap();
    assert_eq!(done.state, GoalState::Succeeded);
    assert_eq!(done.result["position"].as_array().unwrap().len(), 3);

    let bad = c.submit(GoalId::new("t-2"), "gantry", "move", params(json!({"x": -5.0, "y": 0.0, "z": 0.0}))).await.unwrap();
    assert_eq!(bad.state, GoalState::Rejected);

    let err = c.submit(GoalId::new("t-3"), "nope", "move", Params::new()).await.unwrap_err();
    assert!(err.to_string().contains("NotFound"), "{err}");
    c.close();
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bridge_and_stream_layers_agree() {
    let spec = WorldSpec::demo(11);
    // Two identical benches: one driven directly, one through the bridge.
    let direct = devices(&spec, 50.0).await;
    let bridged = devices(&spec, 50.0).await;
    let bridge = run_bridge(bind().await, &endpoints(&bridged), PATIENCE).await.unwrap();

    let s_gantry = StreamClient::connect(&direct[0].url(), Layer::Stream, PATIENCE).await.unwrap();
    let s_libs = StreamClient::connect(&direct[1].url(), Layer::Stream, PATIENCE).await.unwrap();
    let a = StreamClient::connect(&bridge.url(), Layer::Action, PATIENCE).await.unwrap();

    assert_eq!(a.discover().await.unwrap().len(), 3);

    let steps: [(&str, &str, Params); 3] = [
        ("gantry", "move", params(json!({"x": 101.0, "y": 102.0, "z": 20.0}))),
        ("libs", "fire", params(json!({"n_shots": 2}))),
        ("gantry", "home", Params::new()),
    ];
    for (i, (dev, action, p)) in steps.into_iter().enumerate() {
        let id = GoalId::new(format!("g-{i}"));
        let sc = if dev == "gantry" { &s_gantry } else { &s_libs };
        sc.submit(id.clone(), dev, action, p.clone()).await.unwrap();
        let via_stream = sc.wait_terminal(&id, Duration::from_millis(100)).await.unwrap();
        a.submit(id.clone(), dev, action, p).await.unwrap();
        let via_action = a.wait_terminal(&id, Duration::from_millis(100)).await.unwrap();
        assert_eq!(via_stream.state, GoalState::Succeeded, "{action}");
        assert_eq!(via_stream.state, via_action.state, "{action}");
        assert_eq!(comparable(via_stream.result), comparable(via_action.result), "{action}");
    }

    // Goal-addressed requests route by owner.
    let q = a.query(&GoalId::new("g-1")).await.unwrap();
    assert_eq!(q.device_id, DeviceId::new("libs"));
    let missing = a.query(&GoalId::new("nope")).await.unwrap_err();
    assert!(missing.to_string().contains("NotFound"));

    for c in [&s_gantry, &s_libs, &a] {
        c.close();
    }
    bridge.shutdown().await;
    for d in direct.into_iter().chain(bridged) {
        d.shutdown().await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn seq_regression_is_reported() {
    let (rt, _w) = SimWorld::in_process(&WorldSpec::demo(3), None).unwrap();
    let server = serve_runtime(rt, bind().await).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(server.url()).await.unwrap();
    let q = |seq| Message::text(encode_message(&WireMessage::new(Layer::Stream, seq, Body::StatusQuery(StatusQueryBody::default()))).unwrap());
    ws.send(q(5)).await.unwrap();
    ws.send(q(5)).await.unwrap();
    ws.send(Message::text("{not json")).await.unwrap();
    let mut replies = Vec::new();
    while replies.len() < 3 {
        let m = ws.next().await.unwrap().unwrap();
        if let Message::Text(t) = m {
            replies.push(decode_message(t.as_bytes()).unwrap());
        }
    }
    assert!(matches!(replies[0].body, Body::StatusEvent(_)));
    match &replies[1].body {
        Body::Error(e) => {
            assert_eq!(e.code, ErrorCode::Protocol);
            assert_eq!(e.in_reply_to, Some(5));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(&replies[2].body, Body::Error(e) if e.code == ErrorCode::Protocol));
    // Outbound sequence numbers keep increasing.
    assert!(replies.windows(2).all(|w| w[0].seq < w[1].seq));
    server.shutdown().await;
}

/// Submits `n` captures while the connection is cut every `sever_ms`;
/// returns (driver invocations, connections made).
async fn captures_under_severing(n: u64, sever_ms: u64, seed: u64) -> (u64, u64) {
    let (rt, _w) = SimWorld::in_process(&WorldSpec::demo(seed), None).unwrap();
    let server = serve_runtime(rt.clone(), bind().await).await;
    let _ticker = spawn_ticker(rt.clone(), 200.0, Duration::from_millis(2));
    let c = StreamClient::connect(&server.url(), Layer::Stream, PATIENCE).await.unwrap();
    let chaos = {
        let c = c.clone();
        tokio::spawn(async move {
            loop {
                tokio::time::sleep(Duration::from_millis(sever_ms)).await;
                c.sever();
            }
        })
    };
    for i in 0..n {
        let id = GoalId::new(format!("x-{i}"));
        c.submit(id.clone(), "camera", "capture", Params::new()).await.unwrap();
        let s = c.wait_terminal(&id, Duration::from_millis(20)).await.unwrap();
        assert!(s.state.is_terminal());
    }
    chaos.abort();
    let info = rt.device_info(&DeviceId::new("camera")).unwrap();
    let connections = c.connections();
    c.close();
    server.shutdown().await;
    (info.driver_invocations, connections)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn severed_connections_never_double_dispatch() {
    let (invocations, connections) = captures_under_severing(40, 7, 5).await;
    assert!(connections > 1, "the connection was never severed");
    assert_eq!(invocations, 40);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn exactly_once_under_random_severing(n in 5u64..20, sever_ms in 2u64..25, seed in 0u64..1000) {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let (invocations, _) = rt.block_on(captures_under_severing(n, sever_ms, seed));
        prop_assert_eq!(invocations, n);
    }
}

#[test]
fn remote_scan_over_the_bridge() {
    let net = tokio::runtime::Runtime::new().unwrap();
    let spec = WorldSpec::demo(2);
    let time_scale = 200.0;
    let (devs, bridge) = net.block_on(async {
        let d = devices(&spec, time_scale).await;
        let b = run_bridge(bind().await, &endpoints(&d), PATIENCE).await.unwrap();
        (d, b)
    });
    let mut client = RemoteClient::connect(&bridge.url(), time_scale, PATIENCE).unwrap();
    assert_eq!(client.devices().len(), 3);
    let plan = ScanPlan {
        grid: plan_grid([100.0, 100.0], [0.2, 0.4], 0.2).unwrap().with_heights(20.0, 40.0),
        seed: 7,
        pacing_s: 15.0,
        tick_hz: 10.0,
        n_shots: 1,
        retry: Default::default(),
        gantry: GANTRY.into(),
        libs: LIBS.into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let rep = run_scan(&mut client, &plan, Arc::new(LineDb::bundled()), &ReductionConfig::default(), dir.path().to_path_buf(), &ScanOptions::default()).unwrap();
    assert_eq!(rep.outcome, ScanOutcome::Completed);
    assert_eq!(rep.records.len(), 6);
    for r in &rep.records {
        for i in 0..3 {
            assert!((r.achieved_mm[i] - r.commanded_mm[i]).abs() < 0.5, "{r:?}");
        }
    }
    drop(client);
    net.block_on(async {
        bridge.shutdown().await;
        for d in devs {
            d.shutdown().await;
        }
    });
}
