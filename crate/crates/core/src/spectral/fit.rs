//! Windowed pseudo-Voigt least squares. Candidates whose windows overlap are
//! fitted jointly.

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::peaks::PeakCandidate;
use super::profile::PseudoVoigt;
use crate::lm::{minimize, LeastSquares, LmConfig, LmReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    PrimaryPass,
    ResidualPass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedPeak {
    pub center_nm: f64,
    pub amplitude: f64,
    pub w_g_nm: f64,
    pub w_l_nm: f64,
    pub area: f64,
    pub rms: f64,
    pub provenance: Provenance,
}

impl FittedPeak {
    pub fn from_profile(p: PseudoVoigt, rms: f64, provenance: Provenance) -> FittedPeak {
        FittedPeak { center_nm: p.center_nm, amplitude: p.amplitude, w_g_nm: p.w_g_nm, w_l_nm: p.w_l_nm, area: p.area(), rms, provenance }
    }

    pub fn profile(&self) -> PseudoVoigt {
        PseudoVoigt::new(self.center_nm, self.amplitude, self.w_g_nm, self.w_l_nm)
    }

    pub fn fwhm(&self) -> f64 {
        self.profile().fwhm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub lm: LmConfig,
    /// Lower bound on w_G, nm.
    pub min_width_nm: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { lm: LmConfig { cost_tolerance: 1e-12, ..LmConfig::default() }, min_width_nm: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedCandidate {
    pub center_nm: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitOutcome {
    pub peaks: Vec<FittedPeak>,
    pub dropped: Vec<DroppedCandidate>,
}

pub(crate) struct MultiPeak<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub n_peaks: usize,
    pub min_width: f64,
    pub max_width: f64,
}

impl MultiPeak<'_> {
    pub fn unpack(p: &[f64]) -> Vec<PseudoVoigt> {
        p.chunks_exact(4).map(|c| PseudoVoigt::new(c[0], c[1], c[2], c[3])).collect()
    }

    pub fn pack(peaks: &[PseudoVoigt]) -> Vec<f64> {
        peaks.iter().flat_map(|p| [p.center_nm, p.amplitude, p.w_g_nm, p.w_l_nm]).collect()
    }
}

impl LeastSquares for MultiPeak<'_> {
    fn n_params(&self) -> usize {
        4 * self.n_peaks
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let peaks = MultiPeak::unpack(p);
        for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
            out[i] = peaks.iter().map(|pk| pk.eval(x)).sum::<f64>() - y;
        }
    }

    fn project(&self, p: &mut [f64]) {
        let (lo, hi) = (self.x[0], self.x[self.x.len() - 1]);
        for c in p.chunks_exact_mut(4) {
            c[0] = c[0].clamp(lo, hi);
            c[1] = c[1].max(0.0);
            c[2] = c[2].clamp(self.min_width, self.max_width);
            c[3] = c[3].clamp(0.0, self.max_width);
        }
    }
}

/// Fits `init` jointly to `target[lo..=hi]`. Returns the report, fitted
/// profiles and the window RMS.
pub fn fit_group(
    x: &[f64],
    target: &[f64],
    window: (usize, usize),
    init: &[PseudoVoigt],
    cfg: &FitConfig,
) -> (LmReport, Vec<PseudoVoigt>, f64) {
    let (lo, hi) = window;
    let xs = &x[lo..=hi];
    let problem = MultiPeak {
        x: xs,
        y: &target[lo..=hi],
        n_peaks: init.len(),
        min_width: cfg.min_width_nm,
        max_width: (xs[xs.len() - 1] - xs[0]).max(cfg.min_width_nm * 2.0),
    };
    let report = minimize(&problem, &MultiPeak::pack(init), &cfg.lm);
    let rms = report.rms(xs.len());
    let peaks = MultiPeak::unpack(&report.params);
    (report, peaks, rms)
}

/// Initial guess from a candidate: centre, height, and a half-height width
/// split between the Gaussian and Lorentzian parts.
pub fn initial_guess(x: &[f64], data: &[f64], c: &PeakCandidate) -> PseudoVoigt {
    let step = if x.len() > 1 { (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64 } else { 1.0 };
    let f = (c.width_channels * step).max(2.0 * step);
    PseudoVoigt::new(c.center_nm, data[c.channel].max(c.prominence).max(0.0), 0.85 * f, 0.25 * f)
}

fn groups(candidates: &[PeakCandidate]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].window.0);
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut reach = 0usize;
    for i in order {
        let (lo, hi) = candidates[i].window;
        match out.last_mut() {
            Some(g) if lo <= reach => {
                g.push(i);
                reach = reach.max(hi);
            }
            _ => {
                out.push(vec![i]);
                reach = hi;
            }
        }
    }
    out
}

pub(crate) fn acceptable(p: &PseudoVoigt, x: &[f64], window: (usize, usize), report: &LmReport) -> Result<(), String> {
    if !report.converged() {
        return Err(format!("no convergence ({:?})", report.stop));
    }
    if ![p.center_nm, p.amplitude, p.w_g_nm, p.w_l_nm].iter().all(|v| v.is_finite()) {
        return Err("non-finite parameters".into());
    }
    if p.amplitude <= 0.0 {
        return Err("amplitude collapsed to zero".into());
    }
    if p.center_nm <= x[window.0] || p.center_nm >= x[window.1] {
        return Err("centre ran to the window edge".into());
    }
    Ok(())
}

pub fn fit_peaks(x: &[f64], data: &[f64], candidates: &[PeakCandidate], cfg: &FitConfig) -> FitOutcome {
    let mut out = FitOutcome::default();
    for g in groups(candidates) {
        let lo = g.iter().map(|&i| candidates[i].window.0).min().unwrap();
        let hi = g.iter().map(|&i| candidates[i].window.1).max().unwrap();
        if hi <= lo + 3 {
            for &i in &g {
                out.dropped.push(DroppedCandidate { center_nm: candidates[i].center_nm, reason: "window too small".into() });
            }
            continue;
        }
        let init: Vec<PseudoVoigt> = g.iter().map(|&i| initial_guess(x, data, &candidates[i])).collect();
        let (report, fitted, rms) = fit_group(x, data, (lo, hi), &init, cfg);
        for (k, p) in fitted.into_iter().enumerate() {
            match acceptable(&p, x, (lo, hi), &report) {
                Ok(()) => out.peaks.push(FittedPeak::from_profile(p, rms, Provenance::PrimaryPass)),
                Err(reason) => {
                    let c = &candidates[g[k]];
                    debug!(center_nm = c.center_nm, %reason, "dropping peak candidate");
                    out.dropped.push(DroppedCandidate { center_nm: c.center_nm, reason });
                }
            }
        }
    }
    out.peaks.sort_by(|a, b| a.center_nm.total_cmp(&b.center_nm));
    out
}

/// Sum of the profiles at each `x`.
pub fn model(x: &[f64], peaks: &[FittedPeak]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in peaks {
        p.profile().accumulate(x, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::peaks::find_peaks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn axis() -> Vec<f64> {
        (0..600).map(|i| 600.0 + i as f64 * 0.0333).collect()
    }

    #[test]
    fn noise_free_exact_recovery() {
        let x = axis();
        let truth = PseudoVoigt::new(610.0123, 500.0, 0.2, 0.1);
        let mut y = vec![0.0; x.len()];
        truth.accumulate(&x, &mut y);
        let c = find_peaks(&x, &y, 5.0);
        let out = fit_peaks(&x, &y, &c[..1], &FitConfig::default());
        let p = &out.peaks[0];
        assert!((p.center_nm - truth.center_nm).abs() < 1e-7);
        assert!((p.amplitude / truth.amplitude - 1.0).abs() < 1e-5);
        assert!((p.w_g_nm / truth.w_g_nm - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.w_l_nm / truth.w_l_nm - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.area / truth.area() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn area_linear_in_amplitude() {
        let x = axis();
        let mut areas = Vec::new();
        for a in [300.0, 600.0] {
            let mut y = vec![0.0; x.len()];
            PseudoVoigt::new(609.5, a, 0.15, 0.08).accumulate(&x, &mut y);
            let c = find_peaks(&x, &y, 5.0);
            areas.push(fit_peaks(&x, &y, &c, &FitConfig::default()).peaks[0].area);
        }
        assert!((areas[1] / areas[0] - 2.0).abs() < 0.01);
    }

    #[test]
    fn snr_50_center_height_and_total_width() {
        let x = axis();
        let truth = PseudoVoigt::new(610.0, 50.0, 0.2, 0.1);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 1.0).unwrap();
            let mut y: Vec<f64> = x.iter().map(|_| n.sample(&mut rng)).collect();
            truth.accumulate(&x, &mut y);
            let c = find_peaks(&x, &y, 5.0);
            let out = fit_peaks(&x, &y, &c[..1], &FitConfig::default());
            let p = &out.peaks[0];
            assert!((p.center_nm - 610.0).abs() < 0.01, "seed {seed}: {p:?}");
            assert!((p.amplitude / 50.0 - 1.0).abs() < 0.05, "seed {seed}: {p:?}");
            assert!((p.fwhm() / truth.fwhm() - 1.0).abs() < 0.05, "seed {seed}: {p:?}");
        }
    }

    #[test]
    fn noise_candidate_never_negative() {
        let x = axis();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = x.iter().map(|_| n.sample(&mut rng)).collect();
        let fake = PeakCandidate { channel: 300, center_nm: x[300], prominence: 1.0, window: (290, 310), width_channels: 4.0 };
        let out = fit_peaks(&x, &y, &[fake], &FitConfig::default());
        assert!(out.peaks.iter().all(|p| p.amplitude > 0.0));
        assert_eq!(out.peaks.len() + out.dropped.len(), 1);
    }
}
