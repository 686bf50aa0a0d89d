//! Candidate peaks by prominence against a robust noise estimate.

use serde::{Deserialize, Serialize};

use super::background::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakCandidate {
    pub channel: usize,
    pub center_nm: f64,
    pub prominence: f64,
    /// Inclusive channel range used for fitting.
    pub window: (usize, usize),
    /// Full width at half prominence, channels.
    pub width_channels: f64,
}

/// 1.4826 × median absolute deviation.
pub fn noise_sigma(data: &[f64]) -> f64 {
    let mut v = data.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = data.iter().map(|x| (x - m).abs()).collect();
    1.4826 * median(&mut dev)
}

fn boxcar(y: &[f64], half: usize) -> Vec<f64> {
    let n = y.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Topographic prominence of the local maximum at `i`.
fn prominence(s: &[f64], i: usize) -> (f64, usize, usize) {
    let h = s[i];
    let mut left_min = h;
    let mut l = i;
    while l > 0 {
        l -= 1;
        if s[l] > h {
            break;
        }
        left_min = left_min.min(s[l]);
    }
    let mut right_min = h;
    let mut r = i;
    while r + 1 < s.len() {
        r += 1;
        if s[r] > h {
            break;
        }
        right_min = right_min.min(s[r]);
    }
    (h - left_min.max(right_min), l, r)
}

/// Finds peaks in a background-subtracted spectrum. Prominence is measured
/// on a 5-channel boxcar smooth and compared against
/// `min_prominence_sigmas × noise_sigma(data)`.
pub fn find_peaks(x: &[f64], data: &[f64], min_prominence_sigmas: f64) -> Vec<PeakCandidate> {
    find_peaks_with_noise(x, data, min_prominence_sigmas, noise_sigma(data))
}

pub fn find_peaks_with_noise(x: &[f64], data: &[f64], min_prominence_sigmas: f64, sigma: f64) -> Vec<PeakCandidate> {
    assert!(min_prominence_sigmas > 0.0, "min_prominence_sigmas must be > 0");
    assert_eq!(x.len(), data.len());
    let n = data.len();
    if n < 3 {
        return Vec::new();
    }
    let s = boxcar(data, 2);
    let threshold = min_prominence_sigmas * sigma;
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] > s[i - 1] && s[i] >= s[i + 1] {
            // Plateaus: take the first channel.
            let (prom, _, _) = prominence(&s, i);
            if prom > threshold && prom > 0.0 {
                out.push(describe(x, data, &s, i, prom));
            }
        }
        i += 1;
    }
    out.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.channel.cmp(&b.channel)));
    out
}

fn describe(x: &[f64], data: &[f64], s: &[f64], i: usize, prom: f64) -> PeakCandidate {
    let n = s.len();
    let half = s[i] - prom / 2.0;
    let mut l = i;
    while l > 0 && s[l] > half {
        l -= 1;
    }
    let mut r = i;
    while r + 1 < n && s[r] > half {
        r += 1;
    }
    let width = (r - l).max(2) as f64;
    let reach = (1.5 * width).ceil().max(6.0) as usize;
    // Centre on the raw maximum near the smoothed one.
    let lo = i.saturating_sub(2);
    let hi = (i + 2).min(n - 1);
    let c = (lo..=hi).max_by(|&a, &b| data[a].total_cmp(&data[b])).unwrap_or(i);
    PeakCandidate {
        channel: c,
        center_nm: x[c],
        prominence: prom,
        window: (c.saturating_sub(reach), (c + reach).min(n - 1)),
        width_channels: width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::profile::PseudoVoigt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn axis(n: usize) -> Vec<f64> {
        (0..n).map(|i| 500.0 + i as f64 * 0.0333).collect()
    }

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn single_gaussian_snr_50() {
        for seed in 0..20 {
            let x = axis(1000);
            let mut y = noise(1000, 1.0, seed);
            PseudoVoigt::new(x[437], 50.0, 0.15, 0.0).accumulate(&x, &mut y);
            let c = find_peaks(&x, &y, 5.0);
            assert_eq!(c.len(), 1, "seed {seed}: {c:?}");
            assert!((c[0].channel as i64 - 437).abs() <= 1);
            assert!(c[0].window.0 <= c[0].channel && c[0].channel <= c[0].window.1);
        }
    }

    #[test]
    fn pure_noise_has_no_candidates() {
        for seed in 0..20 {
            let x = axis(22_800);
            let y = noise(22_800, 3.0, 100 + seed);
            assert!(find_peaks(&x, &y, 5.0).is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn two_separated_peaks_sorted() {
        let x = axis(1000);
        let mut y = noise(1000, 1.0, 5);
        let p = PseudoVoigt::new(x[300], 40.0, 0.15, 0.05);
        let f = p.fwhm();
        PseudoVoigt::new(x[300] + 10.0 * f, 80.0, 0.15, 0.05).accumulate(&x, &mut y);
        p.accumulate(&x, &mut y);
        let c = find_peaks(&x, &y, 5.0);
        assert_eq!(c.len(), 2);
        assert!(c[0].prominence > c[1].prominence);
        assert!((c[0].center_nm - (x[300] + 10.0 * f)).abs() < 0.04);
    }

    #[test]
    fn mad_of_normal() {
        let y = noise(100_000, 2.0, 9);
        assert!((noise_sigma(&y) - 2.0).abs() < 0.03);
    }
}
