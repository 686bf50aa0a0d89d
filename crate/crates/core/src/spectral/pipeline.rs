//! The four reduction steps chained: background and peak search, profile
//! fits, residual pass, element indexing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::background::subtract_background;
use super::fit::{fit_peaks, FitConfig, FittedPeak, Provenance};
use super::index::{index_elements, ElementAssignment, IndexConfig};
use super::peaks::{find_peaks, noise_sigma};
use super::residual::{refit_residuals, RefitConfig};
use super::SpectralError;
use crate::sim::linedb::LineDb;
use crate::spectrum::Spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub background_window: usize,
    pub min_prominence_sigmas: f64,
    pub max_residual_passes: usize,
    pub index: IndexConfig,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig { background_window: 101, min_prominence_sigmas: 5.0, max_residual_passes: 2, index: IndexConfig::default() }
    }
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.background_window < 3 {
            return Err(("background_window".into(), "must be >= 3".into()));
        }
        if !(self.min_prominence_sigmas > 0.0) {
            return Err(("min_prominence_sigmas".into(), "must be > 0".into()));
        }
        if !(self.index.tol_nm > 0.0) {
            return Err(("index.tol_nm".into(), "must be > 0".into()));
        }
        if !(self.index.accept_threshold >= 0.0) {
            return Err(("index.accept_threshold".into(), "must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub noise_sigma: f64,
    pub peaks: Vec<FittedPeak>,
    pub assignments: Vec<ElementAssignment>,
    pub dropped: usize,
}

/// One assigned line, as stored in measurement records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRow {
    pub element: String,
    pub species: String,
    pub line_nm: f64,
    pub center_nm: f64,
    pub area: f64,
    /// Background-subtracted intensity at the fitted centre.
    pub raw_value: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionSummary {
    pub noise_sigma: f64,
    pub n_peaks: usize,
    pub n_unassigned: usize,
    pub lines: Vec<LineRow>,
}

impl ReductionSummary {
    /// Area of the element's largest-area assigned peak.
    pub fn element_area(&self, element: &str) -> Option<f64> {
        self.lines.iter().filter(|l| l.element == element).map(|l| l.area).max_by(f64::total_cmp)
    }

    pub fn elements(&self) -> Vec<String> {
        let mut v: Vec<String> = self.lines.iter().map(|l| l.element.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn element_areas(&self) -> BTreeMap<String, f64> {
        self.elements().into_iter().map(|e| (e.clone(), self.element_area(&e).unwrap_or(0.0))).collect()
    }
}

pub fn reduce_spectrum(s: &Spectrum, db: &LineDb, cfg: &ReductionConfig) -> Result<Reduction, SpectralError> {
    let x = s.wavelengths();
    let (data, _) = subtract_background(&s.intensities, cfg.background_window)?;
    reduce_data(&x, &data, db, cfg)
}

/// Steps 1b-4 on an already background-subtracted spectrum.
pub fn reduce_data(x: &[f64], data: &[f64], db: &LineDb, cfg: &ReductionConfig) -> Result<Reduction, SpectralError> {
    let sigma = noise_sigma(data);
    let candidates = find_peaks(x, data, cfg.min_prominence_sigmas);
    let fit_cfg = FitConfig::default();
    let outcome = fit_peaks(x, data, &candidates, &fit_cfg);
    let mut peaks = outcome.peaks;
    let refit = RefitConfig { max_passes: cfg.max_residual_passes, min_prominence_sigmas: cfg.min_prominence_sigmas, fit: fit_cfg };
    let added = refit_residuals(x, data, &mut peaks, &refit);
    peaks.extend(added);
    peaks.sort_by(|a, b| a.center_nm.total_cmp(&b.center_nm));
    let assignments = index_elements(&peaks, db, &cfg.index)?;
    Ok(Reduction { noise_sigma: sigma, peaks, assignments, dropped: outcome.dropped.len() })
}

pub fn summarize(x: &[f64], data: &[f64], r: &Reduction) -> ReductionSummary {
    let mut lines = Vec::new();
    for a in r.assignments.iter().filter(|a| a.is_assigned()) {
        let p = &r.peaks[a.peak];
        let ch = x.partition_point(|v| *v < p.center_nm).min(x.len() - 1);
        lines.push(LineRow {
            element: a.element.clone(),
            species: a.species.clone().unwrap_or_default(),
            line_nm: a.line_nm.unwrap_or(f64::NAN),
            center_nm: p.center_nm,
            area: p.area,
            raw_value: data[ch],
            provenance: p.provenance,
        });
    }
    lines.sort_by(|a, b| a.element.cmp(&b.element).then(a.line_nm.total_cmp(&b.line_nm)));
    ReductionSummary {
        noise_sigma: r.noise_sigma,
        n_peaks: r.peaks.len(),
        n_unassigned: r.assignments.iter().filter(|a| !a.is_assigned()).count(),
        lines,
    }
}

/// Reduces a spectrum straight to its record summary.
pub fn reduce_to_summary(s: &Spectrum, db: &LineDb, cfg: &ReductionConfig) -> Result<ReductionSummary, SpectralError> {
    let x = s.wavelengths();
    let (data, _) = subtract_background(&s.intensities, cfg.background_window)?;
    let r = reduce_data(&x, &data, db, cfg)?;
    Ok(summarize(&x, &data, &r))
}
