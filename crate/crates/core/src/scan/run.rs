use std::cell::RefCell;
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use super::{GridPoint, Manifest, MeasurementRecord, ScanError, ScanGrid, ScanStore, Timing, FORMAT};
use crate::bt::{
    build_tree, run_tree, ActionClient, Blackboard, NodeSpec, Predicate, RetryPolicy, RunnerConfig, TaskRegistry, TickCtx,
    TickStatus,
};
use crate::clock::SimTime;
use crate::sim::libs::spectrum_from_params;
use crate::sim::LineDb;
use crate::spectral::pipeline::{reduce_to_summary, ReductionConfig, ReductionSummary};
use crate::spectrum::Spectrum;

/// What to scan and how.
#[derive(Clone, Debug)]
pub struct ScanPlan {
    pub grid: ScanGrid,
    pub seed: u64,
    /// Minimum time between the starts of consecutive points.
    pub pacing_s: f64,
    pub tick_hz: f64,
    pub n_shots: u32,
    pub retry: RetryPolicy,
    pub gantry: String,
    pub libs: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScanOptions {
    /// Stop (as if killed) once this many points were committed in this run.
    pub crash_after: Option<usize>,
    /// Set from outside to abort; in-flight goals are canceled.
    pub abort: Option<Arc<AtomicBool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScanOutcome {
    Completed,
    /// The tree failed; records written so far are kept.
    Aborted { reason: String },
    /// `crash_after` was reached.
    Stopped,
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub outcome: ScanOutcome,
    /// Every record in the directory, including ones from earlier runs.
    pub records: Vec<MeasurementRecord>,
    pub measured_now: usize,
    pub ticks: u64,
    pub finished_at: SimTime,
}

/// State the scan tasks share outside the blackboard.
pub struct ScanShared {
    pub store: ScanStore,
    pub grid: ScanGrid,
    pub db: Arc<LineDb>,
    pub reduction: ReductionConfig,
    pub pacing: SimTime,
    pub committed: usize,
    spectrum: Option<Spectrum>,
    spectrum_path: Option<String>,
    summary: Option<ReductionSummary>,
    pub error: Option<String>,
}

/// The per-point tree. Every step sits in its own retry decorator so a
/// failed step is retried before the sequence moves on.
pub fn scan_tree_spec(gantry: &str, libs: &str, retry: RetryPolicy) -> NodeSpec {
    let step = |name: &str, child: NodeSpec| NodeSpec::Retry {
        name: format!("retry_{name}"),
        policy: retry,
        counter_key: Some("retries".into()),
        child: Box::new(child),
    };
    let task = |name: &str| NodeSpec::Action {
        name: name.into(),
        device: None,
        action: None,
        params: Value::Null,
        result_key: None,
        task: Some(name.into()),
    };
    let goal = |name: &str, device: &str, action: &str, params: Value, result_key: &str| NodeSpec::Action {
        name: name.into(),
        device: Some(device.into()),
        action: Some(action.into()),
        params,
        result_key: Some(result_key.into()),
        task: None,
    };
    let measure = NodeSpec::Sequence {
        name: "measure_next".into(),
        children: vec![
            task("begin_point"),
            step("move_up", goal("move_up", gantry, "move", json!({"x": "$here.0", "y": "$here.1", "z": "$point.safe_z"}), "moved")),
            step("move_xy", goal("move_xy", gantry, "move", json!({"x": "$point.x", "y": "$point.y", "z": "$point.safe_z"}), "moved")),
            step("move_down", goal("move_down", gantry, "move", json!({"x": "$point.x", "y": "$point.y", "z": "$point.z_ref"}), "arrived")),
            step("fire", goal("fire", libs, "fire", json!({"n_shots": "$n_shots"}), "shot")),
            step("export", task("export")),
            step("reduce", task("reduce")),
            task("pace"),
            step("commit", task("commit")),
        ],
    };
    NodeSpec::Parallel {
        name: "scan".into(),
        children: vec![
            NodeSpec::Condition { name: "not_aborted".into(), predicate: Predicate::Not(Box::new(Predicate::Truthy("abort".into()))) },
            NodeSpec::Fallback {
                name: "until_done".into(),
                children: vec![
                    NodeSpec::Condition { name: "all_measured".into(), predicate: Predicate::ListEmpty("points".into()) },
                    measure,
                ],
            },
        ],
    }
}

fn point_json(p: &GridPoint, grid: &ScanGrid) -> Value {
    json!({
        "index": p.index, "col": p.col, "row": p.row,
        "x": p.x_mm, "y": p.y_mm, "z_ref": grid.z_ref_mm, "safe_z": grid.safe_z_mm,
    })
}

fn position(v: Option<&Value>) -> Option<[f64; 3]> {
    serde_json::from_value(v?.get("position")?.clone()).ok()
}

/// Local tasks of the scan tree.
pub fn scan_tasks(shared: Rc<RefCell<ScanShared>>) -> TaskRegistry {
    let mut reg = TaskRegistry::new();

    let sh = shared.clone();
    reg.register("begin_point", move || {
        let sh = sh.clone();
        move |ctx: &mut TickCtx| {
            let Some(head) = ctx.bb.lookup("points.0").and_then(Value::as_u64) else {
                return TickStatus::Failure;
            };
            let s = sh.borrow();
            let p = s.grid.points()[head as usize];
            if ctx.bb.lookup("point.index").and_then(Value::as_u64) != Some(head) {
                ctx.bb.set("point", point_json(&p, &s.grid));
                ctx.bb.set("point_start_us", ctx.now.0);
                ctx.bb.set("retries", 0);
            }
            if ctx.bb.get("here").is_none() {
                ctx.bb.set("here", json!([p.x_mm, p.y_mm]));
            }
            TickStatus::Success
        }
    });

    let sh = shared.clone();
    reg.register("export", move || {
        let sh = sh.clone();
        move |ctx: &mut TickCtx| {
            let mut s = sh.borrow_mut();
            let params = match ctx.bb.get("shot") {
                Some(Value::Object(m)) => m.clone().into_iter().collect(),
                _ => return TickStatus::Failure,
            };
            let index = ctx.bb.lookup("point.index").and_then(Value::as_u64).unwrap_or(0) as usize;
            let spectrum = match spectrum_from_params(&params) {
                Ok(sp) => sp,
                Err(e) => {
                    s.error = Some(format!("bad spectrum: {e}"));
                    return TickStatus::Failure;
                }
            };
            match s.store.write_spectrum(index, &spectrum) {
                Ok(rel) => {
                    s.spectrum = Some(spectrum);
                    s.spectrum_path = Some(rel);
                    TickStatus::Success
                }
                Err(e) => {
                    s.error = Some(e.to_string());
                    TickStatus::Failure
                }
            }
        }
    });

    let sh = shared.clone();
    reg.register("reduce", move || {
        let sh = sh.clone();
        move |_ctx: &mut TickCtx| {
            let mut s = sh.borrow_mut();
            let Some(sp) = s.spectrum.as_ref() else {
                return TickStatus::Failure;
            };
            match reduce_to_summary(sp, &s.db, &s.reduction) {
                Ok(sum) => {
                    s.summary = Some(sum);
                    TickStatus::Success
                }
                Err(e) => {
                    s.error = Some(e.to_string());
                    TickStatus::Failure
                }
            }
        }
    });

    let sh = shared.clone();
    reg.register("pace", move || {
        let sh = sh.clone();
        move |ctx: &mut TickCtx| {
            let start = SimTime(ctx.bb.get("point_start_us").and_then(Value::as_u64).unwrap_or(0));
            if ctx.now >= start + sh.borrow().pacing {
                TickStatus::Success
            } else {
                TickStatus::Running
            }
        }
    });

    reg.register("commit", move || {
        let sh = shared.clone();
        move |ctx: &mut TickCtx| {
            let mut s = sh.borrow_mut();
            let Some(pt) = ctx.bb.get("point").cloned() else {
                return TickStatus::Failure;
            };
            let index = pt["index"].as_u64().unwrap_or(0) as usize;
            let p = s.grid.points()[index];
            let achieved = position(ctx.bb.get("arrived")).unwrap_or([f64::NAN; 3]);
            let record = MeasurementRecord {
                index,
                col: p.col,
                row: p.row,
                commanded_mm: [p.x_mm, p.y_mm, s.grid.z_ref_mm],
                achieved_mm: achieved,
                spectrum_path: s.spectrum_path.clone().unwrap_or_default(),
                reduction: s.summary.clone().unwrap_or_default(),
                timing: Timing {
                    start_us: ctx.bb.get("point_start_us").and_then(Value::as_u64).unwrap_or(0),
                    end_us: ctx.now.0,
                    retries: ctx.bb.get("retries").and_then(Value::as_u64).unwrap_or(0) as u32,
                },
            };
            if let Err(e) = s.store.append(record) {
                s.error = Some(e.to_string());
                return TickStatus::Failure;
            }
            s.committed += 1;
            s.spectrum = None;
            s.spectrum_path = None;
            s.summary = None;
            if let Some(Value::Array(list)) = ctx.bb.get("points").cloned() {
                ctx.bb.set("points", Value::Array(list[1..].to_vec()));
            }
            ctx.bb.set("here", json!([achieved[0], achieved[1]]));
            TickStatus::Success
        }
    });
    reg
}

/// Runs (or resumes) a scan into `dir`. Points already recorded there are
/// skipped. Device failures that outlast the retry budget abort the scan;
/// the records written so far stay on disk.
pub fn run_scan(
    client: &mut dyn ActionClient,
    plan: &ScanPlan,
    db: Arc<LineDb>,
    reduction: &ReductionConfig,
    dir: PathBuf,
    opts: &ScanOptions,
) -> Result<ScanReport, ScanError> {
    let manifest = Manifest { format: FORMAT.into(), grid: plan.grid.clone(), n_points: plan.grid.len(), seed: plan.seed };
    let store = ScanStore::open(&dir, &manifest)?;
    let pending: Vec<Value> = plan.grid.points().iter().filter(|p| !store.is_done(p.index)).map(|p| json!(p.index)).collect();

    let shared = Rc::new(RefCell::new(ScanShared {
        store,
        grid: plan.grid.clone(),
        db,
        reduction: reduction.clone(),
        pacing: SimTime::from_secs_f64(plan.pacing_s),
        committed: 0,
        spectrum: None,
        spectrum_path: None,
        summary: None,
        error: None,
    }));
    let tasks = scan_tasks(shared.clone());
    let spec = scan_tree_spec(&plan.gantry, &plan.libs, plan.retry);
    let devices = if pending.is_empty() { None } else { Some(client.devices()) };
    let mut root = build_tree(&spec, &tasks, devices.as_deref())?;

    let mut bb = Blackboard::new();
    bb.set("points", Value::Array(pending));
    bb.set("n_shots", plan.n_shots);
    let cfg = RunnerConfig { tick_hz: plan.tick_hz, done: Predicate::ListEmpty("points".into()), max_ticks: None };
    let crash_after = opts.crash_after;
    let abort = opts.abort.clone();
    let sh = shared.clone();
    let run = run_tree(&mut root, &mut bb, client, &cfg, move |bb| {
        if abort.as_ref().is_some_and(|a| a.load(Ordering::SeqCst)) {
            bb.set("abort", true);
        }
        crash_after.is_none_or(|n| sh.borrow().committed < n)
    });
    drop(root);
    drop(tasks);

    let s = Rc::try_unwrap(shared).ok().expect("tasks dropped with the tree").into_inner();
    let outcome = match run.status {
        TickStatus::Success => ScanOutcome::Completed,
        TickStatus::Running => ScanOutcome::Stopped,
        TickStatus::Failure => {
            let reason = if bb.truthy("abort") {
                "aborted by request".to_string()
            } else {
                s.error.clone().or_else(|| bb.get("last_error").map(Value::to_string)).unwrap_or_else(|| "scan tree failed".into())
            };
            ScanOutcome::Aborted { reason }
        }
    };
    Ok(ScanReport {
        outcome,
        records: s.store.records().to_vec(),
        measured_now: s.committed,
        ticks: run.ticks,
        finished_at: client.now(),
    })
}
