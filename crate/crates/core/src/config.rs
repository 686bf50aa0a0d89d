//! Runtime configuration: one JSON file, every field optional with a
//! documented default. Only ports may be overridden from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::RetryPolicy;
use crate::scan::{plan_grid, ScanGrid, ScanPlan};
use crate::sim::{CameraConfig, GantryConfig, LibsConfig, LineDb, Phantom, WorldSpec, CAMERA, GANTRY, LIBS};
use crate::spectral::pipeline::ReductionConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
        ConfigError { field: field.into(), reason: reason.into() }
    }

    fn within(section: &str) -> impl Fn((String, String)) -> ConfigError + '_ {
        move |(f, r)| ConfigError::new(format!("{section}.{f}"), r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub host: String,
    pub bridge_port: u16,
    /// Stream-layer port per device.
    pub devices: BTreeMap<String, u16>,
    /// Virtual seconds per wall-clock second for served devices.
    pub time_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            host: "127.0.0.1".into(),
            bridge_port: 7100,
            devices: [(GANTRY, 7101), (LIBS, 7102), (CAMERA, 7103)].into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            time_scale: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn endpoint(&self, device: &str) -> Option<String> {
        self.devices.get(device).map(|p| format!("ws://{}:{p}", self.host))
    }

    pub fn bridge_endpoint(&self) -> String {
        format!("ws://{}:{}", self.host, self.bridge_port)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub origin_mm: [f64; 2],
    pub extent_mm: [f64; 2],
    pub pitch_mm: f64,
    pub z_ref_mm: f64,
    pub safe_z_mm: f64,
    pub pacing_s: f64,
    pub tick_hz: f64,
    pub n_shots: u32,
    pub retry: RetryPolicy,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            origin_mm: [100.0, 100.0],
            extent_mm: [4.0, 10.0],
            pitch_mm: 0.2,
            z_ref_mm: 20.0,
            safe_z_mm: 40.0,
            pacing_s: 15.0,
            tick_hz: 10.0,
            n_shots: 1,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub probability: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub gantry: GantryConfig,
    pub libs: LibsConfig,
    pub camera: CameraConfig,
    /// `null` selects the bundled demo phantom.
    pub phantom_path: Option<PathBuf>,
    /// `null` selects the bundled line list.
    pub line_db_path: Option<PathBuf>,
    pub reduction: ReductionConfig,
    pub scan: ScanConfig,
    pub faults: FaultConfig,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            seed: 42,
            network: NetworkConfig::default(),
            gantry: GantryConfig::default(),
            libs: LibsConfig::default(),
            camera: CameraConfig::default(),
            phantom_path: None,
            line_db_path: None,
            reduction: ReductionConfig::default(),
            scan: ScanConfig::default(),
            faults: FaultConfig::default(),
        }
    }
}

/// Environment variables that may override ports.
pub const ENV_BRIDGE_PORT: &str = "GANTRYLAB_BRIDGE_PORT";
pub const ENV_DEVICE_PORT_PREFIX: &str = "GANTRYLAB_PORT_";

impl RuntimeConfig {
    /// Parses and validates. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<RuntimeConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RuntimeConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let field = match inner.strip_prefix("unknown field `").and_then(|s| s.split('`').next()) {
                Some(k) if path == "." => k.to_string(),
                _ => path,
            };
            ConfigError::new(field, inner)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RuntimeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        RuntimeConfig::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gantry.validate().map_err(ConfigError::within("gantry"))?;
        self.libs.validate().map_err(ConfigError::within("libs"))?;
        self.camera.validate().map_err(ConfigError::within("camera"))?;
        self.reduction.validate().map_err(ConfigError::within("reduction"))?;
        let n = &self.network;
        if n.host.is_empty() {
            return Err(ConfigError::new("network.host", "must not be empty"));
        }
        if !(n.time_scale.is_finite() && n.time_scale > 0.0) {
            return Err(ConfigError::new("network.time_scale", "must be > 0"));
        }
        for d in [GANTRY, LIBS, CAMERA] {
            if !n.devices.contains_key(d) {
                return Err(ConfigError::new(format!("network.devices.{d}"), "missing port"));
            }
        }
        let s = &self.scan;
        if !(s.pitch_mm.is_finite() && s.pitch_mm > 0.0) {
            return Err(ConfigError::new("scan.pitch_mm", "must be > 0"));
        }
        if s.extent_mm.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ConfigError::new("scan.extent_mm", "must be >= 0"));
        }
        if s.origin_mm.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::new("scan.origin_mm", "must be finite"));
        }
        if !(s.safe_z_mm >= s.z_ref_mm) {
            return Err(ConfigError::new("scan.safe_z_mm", "must be >= scan.z_ref_mm"));
        }
        if !(s.pacing_s >= 0.0 && s.pacing_s.is_finite()) {
            return Err(ConfigError::new("scan.pacing_s", "must be >= 0"));
        }
        if !(s.tick_hz > 0.0 && s.tick_hz <= 1000.0) {
            return Err(ConfigError::new("scan.tick_hz", "must be in (0, 1000]"));
        }
        if s.n_shots == 0 || s.n_shots > self.libs.max_shots {
            return Err(ConfigError::new("scan.n_shots", format!("must be in 1..={}", self.libs.max_shots)));
        }
        let r = &s.retry;
        if !(r.base_s >= 0.0 && r.cap_s >= r.base_s && r.cap_s.is_finite()) {
            return Err(ConfigError::new("scan.retry", "need 0 <= base_s <= cap_s"));
        }
        if r.max_attempts == Some(0) {
            return Err(ConfigError::new("scan.retry.max_attempts", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.faults.probability) {
            return Err(ConfigError::new("faults.probability", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Applies `GANTRYLAB_BRIDGE_PORT` and `GANTRYLAB_PORT_<DEVICE>`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let parse = |name: &str, v: String| v.trim().parse::<u16>().map_err(|_| ConfigError::new(name, format!("`{v}` is not a port")));
        if let Some(v) = get(ENV_BRIDGE_PORT) {
            self.network.bridge_port = parse(ENV_BRIDGE_PORT, v)?;
        }
        for (dev, port) in self.network.devices.iter_mut() {
            let name = format!("{ENV_DEVICE_PORT_PREFIX}{}", dev.to_uppercase());
            if let Some(v) = get(&name) {
                *port = parse(&name, v)?;
            }
        }
        Ok(())
    }

    pub fn phantom(&self) -> Result<Phantom, ConfigError> {
        match &self.phantom_path {
            None => Ok(Phantom::demo()),
            Some(p) => Phantom::load(p).map_err(|e| ConfigError::new("phantom_path", e.to_string())),
        }
    }

    pub fn line_db(&self) -> Result<LineDb, ConfigError> {
        match &self.line_db_path {
            None => Ok(LineDb::bundled()),
            Some(p) => LineDb::load(p).map_err(|e| ConfigError::new("line_db_path", e.to_string())),
        }
    }

    pub fn world_spec(&self) -> Result<WorldSpec, ConfigError> {
        Ok(WorldSpec {
            seed: self.seed,
            gantry: self.gantry.clone(),
            libs: self.libs.clone(),
            camera: self.camera.clone(),
            phantom: Arc::new(self.phantom()?),
            line_db: Arc::new(self.line_db()?),
        })
    }

    pub fn grid(&self) -> Result<ScanGrid, ConfigError> {
        let s = &self.scan;
        let g = plan_grid(s.origin_mm, s.extent_mm, s.pitch_mm)
            .map_err(|e| ConfigError::new("scan", e.to_string()))?
            .with_heights(s.z_ref_mm, s.safe_z_mm);
        g.check_limits(self.gantry.limits_mm).map_err(|e| ConfigError::new("scan", e.to_string()))?;
        Ok(g)
    }

    pub fn scan_plan(&self) -> Result<ScanPlan, ConfigError> {
        let s = &self.scan;
        Ok(ScanPlan {
            grid: self.grid()?,
            seed: self.seed,
            pacing_s: s.pacing_s,
            tick_hz: s.tick_hz,
            n_shots: s.n_shots,
            retry: s.retry,
            gantry: GANTRY.into(),
            libs: LIBS.into(),
        })
    }
}
