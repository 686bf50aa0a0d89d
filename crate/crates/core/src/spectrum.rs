//! The LIBS spectrum: a fixed uniform wavelength grid plus intensities.

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;

/// Channels per spectrum.
pub const CHANNELS: usize = 22_800;
pub const WAVELENGTH_MIN_NM: f64 = 190.0;
pub const WAVELENGTH_MAX_NM: f64 = 950.0;
/// Laser line and pulse energy, recorded with every shot.
pub const LASER_WAVELENGTH_NM: f64 = 1064.0;
pub const PULSE_ENERGY_MJ: f64 = 5.0;

/// Uniform wavelength grid with inclusive endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub end_nm: f64,
    pub channels: usize,
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        WavelengthGrid { start_nm: WAVELENGTH_MIN_NM, end_nm: WAVELENGTH_MAX_NM, channels: CHANNELS }
    }
}

impl WavelengthGrid {
    pub fn step_nm(&self) -> f64 {
        (self.end_nm - self.start_nm) / (self.channels - 1) as f64
    }

    pub fn wavelength(&self, channel: usize) -> f64 {
        self.start_nm + channel as f64 * self.step_nm()
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.channels).map(|i| self.wavelength(i)).collect()
    }

    /// Fractional channel index of `nm`.
    pub fn channel_of(&self, nm: f64) -> f64 {
        (nm - self.start_nm) / self.step_nm()
    }

    pub fn contains(&self, nm: f64) -> bool {
        nm >= self.start_nm && nm <= self.end_nm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    /// Gantry position (mm) at acquisition, if known.
    pub position_mm: Option<[f64; 3]>,
    pub acquired_at: SimTime,
    pub shots: u32,
    pub laser_wavelength_nm: f64,
    pub pulse_energy_mj: f64,
    /// False when the spot was outside the sample; the spectrum is then
    /// background and noise only.
    pub on_sample: bool,
}

impl Default for SpectrumMeta {
    fn default() -> Self {
        SpectrumMeta {
            position_mm: None,
            acquired_at: SimTime::ZERO,
            shots: 1,
            laser_wavelength_nm: LASER_WAVELENGTH_NM,
            pulse_energy_mj: PULSE_ENERGY_MJ,
            on_sample: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub grid: WavelengthGrid,
    pub intensities: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, intensities: Vec<f64>) -> Spectrum {
        assert_eq!(grid.channels, intensities.len(), "intensity count must match the grid");
        Spectrum { grid, intensities, meta: SpectrumMeta::default() }
    }

    pub fn zeros() -> Spectrum {
        Spectrum::new(WavelengthGrid::default(), vec![0.0; CHANNELS])
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.grid.wavelengths()
    }

    /// Checks the invariants: matching length, non-negative finite intensities.
    pub fn validate(&self) -> Result<(), String> {
        if self.intensities.len() != self.grid.channels {
            return Err(format!("{} intensities for {} channels", self.intensities.len(), self.grid.channels));
        }
        if !(self.grid.end_nm > self.grid.start_nm) || self.grid.channels < 2 {
            return Err("wavelength grid must be strictly increasing".into());
        }
        if let Some(i) = self.intensities.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("channel {i} has invalid intensity {}", self.intensities[i]));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = WavelengthGrid::default();
        let w = g.wavelengths();
        assert_eq!(w.len(), 22_800);
        assert_eq!(w[0], 190.0);
        assert!((w[22_799] - 950.0).abs() < 1e-9);
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!((g.step_nm() - 0.033_334_8).abs() < 1e-6);
        assert!((g.channel_of(g.wavelength(1234)) - 1234.0).abs() < 1e-9);
    }

    #[test]
    fn validate_rejects_negative() {
        let mut s = Spectrum::zeros();
        s.validate().unwrap();
        s.intensities[7] = -1.0;
        assert!(s.validate().unwrap_err().contains("channel 7"));
    }
}
