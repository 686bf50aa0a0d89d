//! The `gantrylab` command: serve simulated devices, run scans, reduce
//! spectra and build maps.

mod serve;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gantrylab_core::bt::LocalClient;
use gantrylab_core::config::{ConfigError, RuntimeConfig};
use gantrylab_core::net::RemoteClient;
use gantrylab_core::scan::{
    plan_grid, read_csv, read_records, run_scan, throughput_report, write_records, ScanOptions, ScanOutcome, ScanPlan,
    Timing, MANIFEST, RECORDS, SPECTRA_DIR,
};
use gantrylab_core::sim::{FaultInjector, SimWorld};
use gantrylab_core::spectral::{build_element_map, classify_minerals, reduce_to_summary};
use gantrylab_core::vision::{estimate_extrinsics, parse_correspondences};
use gantrylab_core::MeasurementRecord;

/// Set to stop a scan after this many new records, as if killed.
pub const ENV_CRASH_AFTER: &str = "GANTRYLAB_CRASH_AFTER";

#[derive(Parser, Debug)]
#[command(name = "gantrylab", version, about = "Simulated robotic LIBS scanning bench")]
pub struct Cli {
    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Exit when stdin closes; set by `serve` on its children.
    #[arg(long, hide = true, global = true)]
    pub exit_with_parent: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Start every device server and the bridge, each in its own process.
    Serve,
    /// Serve one device on its stream-layer port.
    Device { name: String },
    /// Serve the action-layer bridge.
    Bridge,
    /// Run the scan protocol and store spectra and records.
    Scan(ScanArgs),
    /// Re-reduce stored spectra into measurement records.
    Reduce {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized element map from measurement records.
    Map {
        #[arg(long)]
        element: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate camera extrinsics from correspondences and store them in
    /// the config file.
    Calibrate {
        #[arg(long)]
        corrs: PathBuf,
    },
    /// Cluster records by their element areas.
    Classify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Output directory; an existing scan there is resumed.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid as `<width>x<height>@<pitch>` in mm, from the configured origin.
    #[arg(long)]
    pub grid: Option<String>,
    /// Drive devices served by `gantrylab serve` through the bridge instead
    /// of an in-process simulator.
    #[arg(long)]
    pub remote: bool,
    /// Run the in-process simulator at wall-clock speed.
    #[arg(long, conflicts_with = "remote")]
    pub realtime: bool,
}

/// Parses `4x10@0.2`.
pub fn parse_grid(s: &str) -> Result<([f64; 2], f64)> {
    let (ext, pitch) = s.split_once('@').context("grid must look like <width>x<height>@<pitch>")?;
    let (w, h) = ext.split_once(['x', 'X']).context("grid must look like <width>x<height>@<pitch>")?;
    let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("bad number `{t}` in grid"));
    Ok(([num(w)?, num(h)?], num(pitch)?))
}

pub fn load_config(path: Option<&Path>) -> Result<RuntimeConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => RuntimeConfig::load(p)?,
        None => RuntimeConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            match e.downcast_ref::<ConfigError>() {
                Some(c) => eprintln!("error: invalid {c}"),
                None => eprintln!("error: {e:#}"),
            }
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    if cli.print_config {
        println!("{}", cfg.to_json_pretty());
        return Ok(());
    }
    if cli.exit_with_parent {
        serve::exit_on_stdin_eof();
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given (try --help)");
    };
    match command {
        Command::Serve => serve::serve_all(cli.config.as_deref()),
        Command::Device { name } => serve::device(&cfg, &name),
        Command::Bridge => serve::bridge(&cfg),
        Command::Scan(a) => scan(&cfg, &a),
        Command::Reduce { input, out } => reduce(&cfg, &input, &out),
        Command::Map { element, input, out } => map(&element, &input, &out),
        Command::Calibrate { corrs } => calibrate(cfg, cli.config.as_deref(), &corrs),
        Command::Classify { input, k, out } => classify(&cfg, &input, k, out.as_deref()),
    }
}

fn scan(cfg: &RuntimeConfig, a: &ScanArgs) -> Result<()> {
    let mut plan: ScanPlan = cfg.scan_plan()?;
    if let Some(g) = &a.grid {
        let (extent, pitch) = parse_grid(g)?;
        let s = &cfg.scan;
        let grid = plan_grid(s.origin_mm, extent, pitch)?.with_heights(s.z_ref_mm, s.safe_z_mm);
        grid.check_limits(cfg.gantry.limits_mm)?;
        plan.grid = grid;
    }
    let crash_after = match std::env::var(ENV_CRASH_AFTER) {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("{ENV_CRASH_AFTER}={v}"))?),
        Err(_) => None,
    };
    let opts = ScanOptions { crash_after, ..Default::default() };
    let db = Arc::new(cfg.line_db()?);
    let report = if a.remote {
        let url = cfg.network.bridge_endpoint();
        let mut client = RemoteClient::connect(&url, cfg.network.time_scale, std::time::Duration::from_secs(10))
            .with_context(|| format!("bridge at {url}"))?;
        run_scan(&mut client, &plan, db, &cfg.reduction, a.out.clone(), &opts)?
    } else {
        let faults = (cfg.faults.probability > 0.0).then(|| FaultInjector::new(cfg.faults.probability, cfg.faults.seed));
        let (rt, _world) = SimWorld::in_process(&cfg.world_spec()?, faults.as_ref())?;
        let mut client = LocalClient::new(rt);
        client.realtime = a.realtime;
        run_scan(&mut client, &plan, db, &cfg.reduction, a.out.clone(), &opts)?
    };
    let retries: u64 = report.records.iter().map(|r| r.timing.retries as u64).sum();
    let rate = match throughput_report(&report.records) {
        Ok(t) => format!(", {:.2} measurements/min, {:.0} channels/s", t.measurements_per_min, t.channels_per_sec),
        Err(_) => String::new(),
    };
    let summary = format!(
        "{} of {} points recorded ({} this run, {retries} retries){rate}",
        report.records.len(),
        plan.grid.len(),
        report.measured_now
    );
    match report.outcome {
        ScanOutcome::Completed => {
            println!("scan completed: {summary}");
            Ok(())
        }
        ScanOutcome::Stopped => bail!("scan stopped early: {summary}"),
        ScanOutcome::Aborted { reason } => bail!("scan aborted: {reason}; {summary}"),
    }
}

/// Finds the scan directory for `input`: the directory itself, or the
/// parent of its spectra directory.
fn scan_root(input: &Path) -> Option<PathBuf> {
    [input.to_path_buf(), input.parent().map(Path::to_path_buf).unwrap_or_default()]
        .into_iter()
        .find(|d| d.join(MANIFEST).is_file() && d.join(RECORDS).is_file())
}

fn reduce(cfg: &RuntimeConfig, input: &Path, out: &Path) -> Result<()> {
    let db = cfg.line_db()?;
    let records: Vec<MeasurementRecord> = match scan_root(input) {
        Some(root) => {
            let mut recs = read_records(&root.join(RECORDS))?;
            for r in &mut recs {
                let s = read_csv(&root.join(&r.spectrum_path))?;
                r.reduction = reduce_to_summary(&s, &db, &cfg.reduction).with_context(|| r.spectrum_path.clone())?;
            }
            recs
        }
        None => {
            // Loose spectra: records in file-name order, positions unknown.
            let dir = if input.join(SPECTRA_DIR).is_dir() { input.join(SPECTRA_DIR) } else { input.to_path_buf() };
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| dir.display().to_string())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no spectra (*.csv) in {}", dir.display());
            }
            let mut recs = Vec::with_capacity(files.len());
            for (i, f) in files.iter().enumerate() {
                let s = read_csv(f)?;
                let reduction = reduce_to_summary(&s, &db, &cfg.reduction).with_context(|| f.display().to_string())?;
                let pos = s.meta.position_mm.unwrap_or([0.0; 3]);
                recs.push(MeasurementRecord {
                    index: i,
                    col: i,
                    row: 0,
                    commanded_mm: pos,
                    achieved_mm: pos,
                    spectrum_path: f.display().to_string(),
                    reduction,
                    timing: Timing::default(),
                });
            }
            recs
        }
    };
    write_records(out, &records)?;
    println!("reduced {} spectra into {}", records.len(), out.display());
    Ok(())
}

fn map(element: &str, input: &Path, out: &Path) -> Result<()> {
    let records = read_records(input)?;
    if records.is_empty() {
        bail!("{} holds no records", input.display());
    }
    let cols = records.iter().map(|r| r.col).max().unwrap_or(0) + 1;
    let rows = records.iter().map(|r| r.row).max().unwrap_or(0) + 1;
    let mut placed = records.clone();
    for r in &mut placed {
        r.index = r.row * cols + r.col;
    }
    let m = build_element_map(&placed, element, cols, rows);
    std::fs::write(out, m.to_text()).with_context(|| out.display().to_string())?;
    println!("{element} map {cols}x{rows} written to {} (raw min {:.4e}, max {:.4e})", out.display(), m.min, m.max);
    Ok(())
}

fn calibrate(mut cfg: RuntimeConfig, config_path: Option<&Path>, corrs: &Path) -> Result<()> {
    let text = std::fs::read_to_string(corrs).with_context(|| corrs.display().to_string())?;
    let c = parse_correspondences(&text)?;
    let est = estimate_extrinsics(&c, &cfg.camera.intrinsics)?;
    cfg.camera.extrinsics = est.extrinsics;
    println!("pose estimated from {} points, rms {:.3} px", c.len(), est.rms_px);
    match config_path {
        Some(p) => {
            std::fs::write(p, cfg.to_json_pretty() + "\n").with_context(|| p.display().to_string())?;
            println!("camera.extrinsics written to {}", p.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&est.extrinsics)?),
    }
    Ok(())
}

fn classify(cfg: &RuntimeConfig, input: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    let records = read_records(input)?;
    let mut elements: Vec<String> = records.iter().flat_map(|r| r.reduction.elements()).collect();
    elements.sort();
    elements.dedup();
    let features: Vec<Vec<f64>> =
        records.iter().map(|r| elements.iter().map(|e| r.reduction.element_area(e).unwrap_or(0.0)).collect()).collect();
    let res = classify_minerals(&features, k, cfg.seed)?;
    let mut text = String::new();
    for (r, l) in records.iter().zip(&res.labels) {
        text.push_str(&serde_json::json!({"index": r.index, "col": r.col, "row": r.row, "cluster": l}).to_string());
        text.push('\n');
    }
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| p.display().to_string())?,
        None => print!("{text}"),
    }
    eprintln!("{} records in {k} clusters over {} elements (inertia {:.4e})", records.len(), elements.len(), res.inertia);
    Ok(())
}
