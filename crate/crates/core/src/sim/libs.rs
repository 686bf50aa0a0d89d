//! LIBS analyzer forward model and driver.

use std::sync::Arc;

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::gantry::SharedGantry;
use super::linedb::LineDb;
use super::phantom::Phantom;
use crate::clock::SimTime;
use crate::protocol::{ActionSpec, DeviceDescriptor, DeviceId, ParamKind, ParamSpec, Params, RejectReason};
use crate::runtime::{ActionRun, DriverBinding, StartError, Timed};
use crate::spectral::profile::PseudoVoigt;
use crate::spectrum::{Spectrum, SpectrumMeta, WavelengthGrid, LASER_WAVELENGTH_NM, PULSE_ENERGY_MJ};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibsConfig {
    /// Peak height of a line with relative intensity 1 at fraction 1.
    pub gain: f64,
    pub w_g_nm: f64,
    pub w_l_nm: f64,
    /// Continuum: `level + bump * exp(-((nm - bump_center) / bump_width)^2)`.
    pub continuum_level: f64,
    pub continuum_bump: f64,
    pub continuum_bump_center_nm: f64,
    pub continuum_bump_width_nm: f64,
    /// Per-channel sigma = noise_scale * sqrt(max(I, noise_floor)) / sqrt(shots).
    pub noise_scale: f64,
    pub noise_floor: f64,
    pub acquisition_s: f64,
    pub max_shots: u32,
}

impl Default for LibsConfig {
    fn default() -> Self {
        LibsConfig {
            gain: 20_000.0,
            w_g_nm: 0.12,
            w_l_nm: 0.06,
            continuum_level: 200.0,
            continuum_bump: 800.0,
            continuum_bump_center_nm: 450.0,
            continuum_bump_width_nm: 250.0,
            noise_scale: 1.0,
            noise_floor: 25.0,
            acquisition_s: 2.0,
            max_shots: 1000,
        }
    }
}

impl LibsConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        let pos = |name: &str, v: f64| if v.is_finite() && v > 0.0 { Ok(()) } else { Err((name.to_string(), "must be > 0".to_string())) };
        let nonneg = |name: &str, v: f64| if v.is_finite() && v >= 0.0 { Ok(()) } else { Err((name.to_string(), "must be >= 0".to_string())) };
        pos("gain", self.gain)?;
        nonneg("w_g_nm", self.w_g_nm)?;
        nonneg("w_l_nm", self.w_l_nm)?;
        if self.w_g_nm == 0.0 && self.w_l_nm == 0.0 {
            return Err(("w_g_nm".into(), "w_g_nm and w_l_nm cannot both be 0".into()));
        }
        nonneg("continuum_level", self.continuum_level)?;
        nonneg("continuum_bump", self.continuum_bump)?;
        pos("continuum_bump_width_nm", self.continuum_bump_width_nm)?;
        nonneg("noise_scale", self.noise_scale)?;
        nonneg("noise_floor", self.noise_floor)?;
        nonneg("acquisition_s", self.acquisition_s)?;
        if self.max_shots == 0 {
            return Err(("max_shots".into(), "must be >= 1".into()));
        }
        Ok(())
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a shot at (x, y): depends only on the base seed and the
/// position on a micrometre lattice.
pub fn shot_seed(seed: u64, x: f64, y: f64, shots: u32) -> u64 {
    let qx = (x * 1000.0).round() as i64 as u64;
    let qy = (y * 1000.0).round() as i64 as u64;
    mix(mix(mix(seed ^ qx) ^ qy) ^ shots as u64)
}

#[derive(Clone, Debug)]
pub struct LibsModel {
    pub config: LibsConfig,
    pub grid: WavelengthGrid,
    pub db: Arc<LineDb>,
    pub phantom: Arc<Phantom>,
    pub seed: u64,
}

impl LibsModel {
    pub fn new(config: LibsConfig, db: Arc<LineDb>, phantom: Arc<Phantom>, seed: u64) -> LibsModel {
        LibsModel { config, grid: WavelengthGrid::default(), db, phantom, seed }
    }

    pub fn continuum(&self, nm: f64) -> f64 {
        let c = &self.config;
        let z = (nm - c.continuum_bump_center_nm) / c.continuum_bump_width_nm;
        c.continuum_level + c.continuum_bump * (-z * z).exp()
    }

    /// Line profiles for the cell under (x, y); empty off-sample.
    pub fn lines_at(&self, x: f64, y: f64) -> Vec<(String, PseudoVoigt)> {
        let Some(comp) = self.phantom.composition_at(x, y) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for line in self.db.lines() {
            let frac = comp.get(&line.element).copied().unwrap_or(0.0);
            if frac > 0.0 && self.grid.contains(line.wavelength_nm) {
                let a = self.config.gain * frac * line.relative_intensity;
                out.push((line.element.clone(), PseudoVoigt::new(line.wavelength_nm, a, self.config.w_g_nm, self.config.w_l_nm)));
            }
        }
        out
    }

    /// Noise-free expected spectrum at (x, y).
    pub fn expected(&self, x: f64, y: f64) -> Vec<f64> {
        let w = self.grid.wavelengths();
        let mut out: Vec<f64> = w.iter().map(|&nm| self.continuum(nm)).collect();
        for (_, p) in self.lines_at(x, y) {
            p.accumulate(&w, &mut out);
        }
        out
    }

    pub fn fire(&self, x: f64, y: f64, shots: u32, now: SimTime, noisy: bool) -> Spectrum {
        let mut intensities = self.expected(x, y);
        if noisy && self.config.noise_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(shot_seed(self.seed, x, y, shots));
            let k = self.config.noise_scale / (shots.max(1) as f64).sqrt();
            for v in &mut intensities {
                let sigma = k * v.max(self.config.noise_floor).sqrt();
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (*v + sigma * z).max(0.0);
            }
        }
        let mut s = Spectrum::new(self.grid, intensities);
        s.meta = SpectrumMeta {
            position_mm: None,
            acquired_at: now,
            shots,
            laser_wavelength_nm: LASER_WAVELENGTH_NM,
            pulse_energy_mj: PULSE_ENERGY_MJ,
            on_sample: self.phantom.composition_at(x, y).is_some(),
        };
        s
    }
}

/// Packs a spectrum into action-result parameters.
pub fn spectrum_to_params(s: &Spectrum) -> Params {
    let mut bytes = Vec::with_capacity(s.len() * 8);
    for v in &s.intensities {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut p = Params::new();
    p.insert("grid".into(), serde_json::to_value(s.grid).expect("grid serializes"));
    p.insert("intensities_f64le_b64".into(), json!(base64::engine::general_purpose::STANDARD.encode(bytes)));
    p.insert("meta".into(), serde_json::to_value(&s.meta).expect("meta serializes"));
    p
}

pub fn spectrum_from_params(p: &Params) -> Result<Spectrum, String> {
    let grid: WavelengthGrid = serde_json::from_value(p.get("grid").cloned().ok_or("missing grid")?).map_err(|e| format!("grid: {e}"))?;
    let b64 = p.get("intensities_f64le_b64").and_then(|v| v.as_str()).ok_or("missing intensities_f64le_b64")?;
    let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|e| format!("intensities: {e}"))?;
    if bytes.len() != grid.channels * 8 {
        return Err(format!("intensities: {} bytes for {} channels", bytes.len(), grid.channels));
    }
    let intensities = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut s = Spectrum::new(grid, intensities);
    if let Some(m) = p.get("meta") {
        s.meta = serde_json::from_value(m.clone()).map_err(|e| format!("meta: {e}"))?;
    }
    s.validate()?;
    Ok(s)
}

pub fn descriptor(id: &DeviceId, endpoint: &str) -> DeviceDescriptor {
    DeviceDescriptor {
        device_id: id.clone(),
        display_name: "LIBS analyzer".into(),
        actions: vec![ActionSpec::new(id, "fire", vec![ParamSpec::optional("n_shots", ParamKind::Integer, None)])],
        endpoint: endpoint.to_string(),
    }
}

pub fn binding(id: &DeviceId, model: Arc<LibsModel>, gantry: SharedGantry) -> DriverBinding {
    DriverBinding::new(id.clone()).with_handler("fire", move |p: &Params, now: SimTime| {
        let shots = match p.get("n_shots") {
            None => 1,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 && n <= model.config.max_shots as u64 => n as u32,
                _ => {
                    return Err(StartError::rejected(
                        RejectReason::BadParams,
                        format!("n_shots must be in 1..={}", model.config.max_shots),
                    ))
                }
            },
        };
        let pos = {
            let g = gantry.lock().unwrap();
            if g.moving {
                return Err(StartError::rejected(RejectReason::Busy, "gantry is moving"));
            }
            g.position
        };
        let mut s = model.fire(pos[0], pos[1], shots, now, true);
        s.meta.position_mm = Some(pos);
        let ends = now + SimTime::from_secs_f64(model.config.acquisition_s);
        Ok(Box::new(Timed::new(ends, Ok(spectrum_to_params(&s)))) as Box<dyn ActionRun>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::background::estimate_background;

    fn li_model(frac: f64) -> LibsModel {
        let mut c = super::super::phantom::Composition::new();
        c.insert("Li".into(), frac);
        let ph = Phantom::uniform([50.0, 50.0], 10.0, c).unwrap();
        LibsModel::new(LibsConfig::default(), Arc::new(LineDb::bundled()), Arc::new(ph), 7)
    }

    #[test]
    fn li_cell_strongest_peak_is_li_670() {
        let m = li_model(1.0);
        let s = m.fire(50.0, 50.0, 1, SimTime::ZERO, true);
        s.validate().unwrap();
        let bg = estimate_background(&s.intensities, 101).unwrap();
        let (imax, _) = s.intensities.iter().zip(&bg).map(|(a, b)| a - b).enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((s.grid.wavelength(imax) - 670.791).abs() <= 0.1);
    }

    #[test]
    fn same_point_same_seed_identical() {
        let m = li_model(0.5);
        assert_eq!(m.fire(50.0, 51.0, 1, SimTime::ZERO, true), m.fire(50.0, 51.0, 1, SimTime::ZERO, true));
        assert_ne!(m.fire(50.0, 51.0, 1, SimTime::ZERO, true).intensities, m.fire(50.2, 51.0, 1, SimTime::ZERO, true).intensities);
    }

    #[test]
    fn off_sample_flagged() {
        let s = li_model(1.0).fire(0.0, 0.0, 1, SimTime::ZERO, true);
        assert!(!s.meta.on_sample);
    }

    #[test]
    fn line_areas_linear_in_fraction() {
        let a = li_model(0.2).lines_at(50.0, 50.0);
        let b = li_model(0.4).lines_at(50.0, 50.0);
        assert_eq!(a.len(), b.len());
        for ((_, pa), (_, pb)) in a.iter().zip(&b) {
            assert!((pb.area() / pa.area() - 2.0).abs() < 1e-12);
        }
        let ea = li_model(0.2).expected(50.0, 50.0);
        let eb = li_model(0.4).expected(50.0, 50.0);
        let m = li_model(0.0);
        let cont: Vec<f64> = m.grid.wavelengths().iter().map(|&w| m.continuum(w)).collect();
        for i in (0..ea.len()).step_by(7) {
            let (la, lb) = (ea[i] - cont[i], eb[i] - cont[i]);
            assert!((lb - 2.0 * la).abs() <= 1e-9 * lb.abs().max(1.0));
        }
    }

    #[test]
    fn params_round_trip() {
        let s = li_model(1.0).fire(50.0, 50.0, 3, SimTime::from_millis(5), true);
        assert_eq!(spectrum_from_params(&spectrum_to_params(&s)).unwrap(), s);
    }
}
