//! Residual pass: subtract the fitted model, look for what is left, and
//! refit new peaks together with the fitted peaks they overlap.

use super::fit::{acceptable, fit_group, initial_guess, FitConfig, FittedPeak, Provenance};
use super::peaks::{find_peaks_with_noise, noise_sigma};
use super::profile::PseudoVoigt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefitConfig {
    pub max_passes: usize,
    pub min_prominence_sigmas: f64,
    pub fit: FitConfig,
}

impl Default for RefitConfig {
    fn default() -> Self {
        RefitConfig { max_passes: 2, min_prominence_sigmas: 5.0, fit: FitConfig::default() }
    }
}

fn channel_of(x: &[f64], nm: f64) -> usize {
    x.partition_point(|v| *v < nm).min(x.len() - 1)
}

fn window_rms(x: &[f64], data: &[f64], peaks: &[FittedPeak], lo: usize, hi: usize) -> f64 {
    let profiles: Vec<PseudoVoigt> = peaks.iter().map(FittedPeak::profile).collect();
    let ss: f64 = (lo..=hi)
        .map(|i| {
            let m: f64 = profiles.iter().map(|p| p.eval(x[i])).sum();
            (data[i] - m).powi(2)
        })
        .sum();
    (ss / (hi - lo + 1) as f64).sqrt()
}

/// Total RMS of `data` minus the model over every channel.
pub fn total_rms(x: &[f64], data: &[f64], peaks: &[FittedPeak]) -> f64 {
    let m = super::fit::model(x, peaks);
    (data.iter().zip(&m).map(|(d, m)| (d - m).powi(2)).sum::<f64>() / data.len().max(1) as f64).sqrt()
}

/// Runs at most `max_passes` residual passes. Peaks in `fitted` may be
/// re-refined jointly with new neighbours; the returned peaks are the
/// additions, tagged [`Provenance::ResidualPass`]. A refit is kept only if it
/// lowers the RMS over its window, so the total RMS never increases.
pub fn refit_residuals(x: &[f64], data: &[f64], fitted: &mut Vec<FittedPeak>, cfg: &RefitConfig) -> Vec<FittedPeak> {
    let n_primary = fitted.len();
    let mut all: Vec<FittedPeak> = std::mem::take(fitted);
    if x.len() < 8 {
        *fitted = all;
        return Vec::new();
    }
    let step = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;

    for _pass in 0..cfg.max_passes {
        let model = super::fit::model(x, &all);
        let residual: Vec<f64> = data.iter().zip(&model).map(|(d, m)| d - m).collect();
        let sigma = noise_sigma(&residual);
        let candidates = find_peaks_with_noise(x, &residual, cfg.min_prominence_sigmas, sigma);
        if candidates.is_empty() {
            break;
        }
        let mut touched: Vec<(usize, usize)> = Vec::new();
        let mut accepted_any = false;
        for c in &candidates {
            if touched.iter().any(|&(lo, hi)| c.channel >= lo && c.channel <= hi) {
                continue;
            }
            let guess = initial_guess(x, &residual, c);
            let (mut lo, mut hi) = c.window;
            // Existing peaks that reach into the candidate window join the fit.
            let mut members: Vec<usize> = Vec::new();
            for (k, p) in all.iter().enumerate() {
                let reach = 2.0 * p.fwhm();
                if p.center_nm + reach >= x[lo] && p.center_nm - reach <= x[hi] {
                    members.push(k);
                }
            }
            for &k in &members {
                let p = &all[k];
                let pad = (2.0 * p.fwhm() / step).ceil() as usize;
                let ch = channel_of(x, p.center_nm);
                lo = lo.min(ch.saturating_sub(pad));
                hi = hi.max((ch + pad).min(x.len() - 1));
            }
            if hi <= lo + 3 {
                continue;
            }
            let others: Vec<FittedPeak> =
                all.iter().enumerate().filter(|(k, _)| !members.contains(k)).map(|(_, p)| p.clone()).collect();
            let other_model = super::fit::model(&x[lo..=hi], &others);
            let mut target = data.to_vec();
            for i in lo..=hi {
                target[i] -= other_model[i - lo];
            }
            let before = window_rms(x, data, &all, lo, hi);
            let mut init: Vec<PseudoVoigt> = members.iter().map(|&k| all[k].profile()).collect();
            init.push(guess);
            let (report, peaks, rms) = fit_group(x, &target, (lo, hi), &init, &cfg.fit);
            let newcomer = peaks[peaks.len() - 1];
            if acceptable(&newcomer, x, (lo, hi), &report).is_err() {
                continue;
            }
            if newcomer.amplitude < 0.5 * cfg.min_prominence_sigmas * sigma {
                continue;
            }
            if peaks.iter().any(|p| p.amplitude <= 0.0) {
                continue;
            }
            if !(rms < before) {
                continue;
            }
            for (j, &k) in members.iter().enumerate() {
                let prov = all[k].provenance;
                all[k] = FittedPeak::from_profile(peaks[j], rms, prov);
            }
            all.push(FittedPeak::from_profile(newcomer, rms, Provenance::ResidualPass));
            touched.push((lo, hi));
            accepted_any = true;
        }
        if !accepted_any {
            break;
        }
    }
    let added = all.split_off(n_primary);
    *fitted = all;
    added
}
