//! Three-axis gantry: linear interpolated motion at a commanded feed,
//! quantized readback, gaussian repeatability on arrival.

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::SimTime;
use crate::protocol::{ActionSpec, DeviceDescriptor, DeviceId, ParamKind, ParamSpec, Params, RejectReason};
use crate::runtime::{ActionRun, DriverBinding, StartError, Step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GantryConfig {
    pub limits_mm: [f64; 3],
    pub resolution_mm: f64,
    pub repeatability_sigma_mm: f64,
    pub default_feed_mm_s: f64,
    pub home_feed_mm_s: f64,
}

impl Default for GantryConfig {
    fn default() -> Self {
        GantryConfig {
            limits_mm: [730.0, 810.0, 100.0],
            resolution_mm: 0.02,
            repeatability_sigma_mm: 0.05,
            default_feed_mm_s: 25.0,
            home_feed_mm_s: 50.0,
        }
    }
}

impl GantryConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.limits_mm.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(("limits_mm".into(), "limits must be positive".into()));
        }
        if !(self.resolution_mm > 0.0) {
            return Err(("resolution_mm".into(), "must be > 0".into()));
        }
        if !(self.repeatability_sigma_mm >= 0.0) {
            return Err(("repeatability_sigma_mm".into(), "must be >= 0".into()));
        }
        if !(self.default_feed_mm_s > 0.0) {
            return Err(("default_feed_mm_s".into(), "must be > 0".into()));
        }
        if !(self.home_feed_mm_s > 0.0) {
            return Err(("home_feed_mm_s".into(), "must be > 0".into()));
        }
        Ok(())
    }

    pub fn within_limits(&self, p: [f64; 3]) -> bool {
        p.iter().zip(self.limits_mm).all(|(v, l)| *v >= 0.0 && *v <= l)
    }
}

pub fn quantize(v: f64, resolution: f64) -> f64 {
    (v / resolution).round() * resolution
}

#[derive(Debug)]
pub struct GantryState {
    pub config: GantryConfig,
    pub position: [f64; 3],
    pub moving: bool,
    rng: ChaCha8Rng,
}

pub type SharedGantry = Arc<Mutex<GantryState>>;

impl GantryState {
    pub fn new(config: GantryConfig, seed: u64) -> GantryState {
        GantryState { config, position: [0.0; 3], moving: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn shared(config: GantryConfig, seed: u64) -> SharedGantry {
        Arc::new(Mutex::new(GantryState::new(config, seed)))
    }

    fn quantize3(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.config.resolution_mm;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = quantize(p[i].clamp(0.0, self.config.limits_mm[i]), r);
        }
        out
    }

    /// Where a move to `target` actually ends up.
    fn arrival(&mut self, target: [f64; 3]) -> [f64; 3] {
        let sigma = self.config.repeatability_sigma_mm;
        let mut p = target;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("sigma checked");
            for v in &mut p {
                *v += n.sample(&mut self.rng);
            }
        }
        self.quantize3(p)
    }
}

/// Checks a move request and plans it. The state is not modified.
pub fn plan_move(
    state: &mut GantryState,
    target: [f64; 3],
    feed: f64,
    noisy: bool,
) -> Result<([f64; 3], [f64; 3]), StartError> {
    if !(feed.is_finite() && feed > 0.0) {
        return Err(StartError::rejected(RejectReason::BadParams, format!("feed must be > 0, got {feed}")));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(StartError::rejected(RejectReason::BadParams, "target must be finite"));
    }
    if !state.config.within_limits(target) {
        let l = state.config.limits_mm;
        return Err(StartError::rejected(
            RejectReason::OutOfRange,
            format!(
                "target ({}, {}, {}) outside travel limits ({}, {}, {})",
                target[0], target[1], target[2], l[0], l[1], l[2]
            ),
        ));
    }
    let start = state.position;
    let here = state.quantize3(target) == start;
    let end = if here || !noisy { state.quantize3(target) } else { state.arrival(target) };
    Ok((start, end))
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

fn position_params(p: [f64; 3]) -> Params {
    let mut out = Params::new();
    out.insert("position".into(), json!(p));
    out
}

/// A linear move in progress.
pub struct MoveRun {
    gantry: SharedGantry,
    start: [f64; 3],
    end: [f64; 3],
    t0: SimTime,
    duration_s: f64,
    cancel_requested: bool,
    finished: bool,
}

impl MoveRun {
    pub fn start(gantry: SharedGantry, target: [f64; 3], feed: f64, noisy: bool, now: SimTime) -> Result<MoveRun, StartError> {
        let (start, end) = {
            let mut g = gantry.lock().unwrap();
            let plan = plan_move(&mut g, target, feed, noisy)?;
            g.moving = plan.0 != plan.1;
            plan
        };
        let duration_s = distance(start, end) / feed;
        Ok(MoveRun { gantry, start, end, t0: now, duration_s, cancel_requested: false, finished: false })
    }

    fn position_at(&self, g: &GantryState, now: SimTime) -> [f64; 3] {
        let elapsed = now.saturating_sub(self.t0).as_secs_f64();
        let f = if self.duration_s > 0.0 { (elapsed / self.duration_s).min(1.0) } else { 1.0 };
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = self.start[i] + (self.end[i] - self.start[i]) * f;
        }
        g.quantize3(p)
    }
}

impl ActionRun for MoveRun {
    fn step(&mut self, now: SimTime) -> Step {
        if self.finished {
            return Step::Failed("step after completion".into());
        }
        let mut g = self.gantry.lock().unwrap();
        let elapsed = now.saturating_sub(self.t0).as_secs_f64();
        if self.cancel_requested {
            let p = self.position_at(&g, now);
            g.position = p;
            g.moving = false;
            self.finished = true;
            return Step::Canceled(position_params(p));
        }
        if elapsed >= self.duration_s {
            g.position = self.end;
            g.moving = false;
            self.finished = true;
            return Step::Done(position_params(self.end));
        }
        let p = self.position_at(&g, now);
        g.position = p;
        let mut fb = position_params(p);
        fb.insert("remaining_mm".into(), json!(distance(p, self.end)));
        Step::Running(Some(fb))
    }

    fn cancel(&mut self) {
        self.cancel_requested = true;
    }
}

pub fn descriptor(id: &DeviceId, endpoint: &str) -> DeviceDescriptor {
    let mm = Some("mm");
    DeviceDescriptor {
        device_id: id.clone(),
        display_name: "XYZ gantry".into(),
        actions: vec![
            ActionSpec::new(
                id,
                "move",
                vec![
                    ParamSpec::required("x", ParamKind::Number, mm),
                    ParamSpec::required("y", ParamKind::Number, mm),
                    ParamSpec::required("z", ParamKind::Number, mm),
                    ParamSpec::optional("feed", ParamKind::Number, Some("mm/s")),
                ],
            ),
            ActionSpec::new(id, "home", vec![]),
            ActionSpec::new(id, "stop", vec![]),
        ],
        endpoint: endpoint.to_string(),
    }
}

fn number(params: &Params, key: &str) -> Option<f64> {
    params.get(key).and_then(|v| v.as_f64())
}

pub fn binding(id: &DeviceId, gantry: SharedGantry) -> DriverBinding {
    let g_move = gantry.clone();
    let g_home = gantry.clone();
    let g_stop = gantry;
    DriverBinding::new(id.clone())
        .with_handler("move", move |p: &Params, now: SimTime| {
            let target = [number(p, "x").unwrap_or(f64::NAN), number(p, "y").unwrap_or(f64::NAN), number(p, "z").unwrap_or(f64::NAN)];
            let feed = number(p, "feed").unwrap_or_else(|| g_move.lock().unwrap().config.default_feed_mm_s);
            Ok(Box::new(MoveRun::start(g_move.clone(), target, feed, true, now)?) as Box<dyn ActionRun>)
        })
        .with_handler("home", move |_p: &Params, now: SimTime| {
            let feed = g_home.lock().unwrap().config.home_feed_mm_s;
            Ok(Box::new(MoveRun::start(g_home.clone(), [0.0; 3], feed, false, now)?) as Box<dyn ActionRun>)
        })
        .with_handler("stop", move |_p: &Params, _now: SimTime| {
            let mut g = g_stop.lock().unwrap();
            g.moving = false;
            Ok(Box::new(crate::runtime::Immediate(Some(Ok(position_params(g.position))))) as Box<dyn ActionRun>)
        })
}
