//! Background estimate: morphological opening (moving minimum then moving
//! maximum), a moving-average smooth, then a blockwise median offset so the
//! subtracted spectrum is centred on zero between peaks.

use std::collections::VecDeque;

use super::SpectralError;

fn running_extreme(y: &[f64], half: usize, keep_min: bool) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let better = |a: f64, b: f64| if keep_min { a <= b } else { a >= b };
    let mut next = 0;
    for i in 0..n {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while let Some(&b) = dq.back() {
                if better(y[next], y[b]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(half);
        while let Some(&f) = dq.front() {
            if f < lo {
                dq.pop_front();
            } else {
                break;
            }
        }
        out[i] = y[*dq.front().expect("window is non-empty")];
    }
    out
}

/// Moving average with a window that shrinks symmetrically at the edges,
/// so linear trends pass through unchanged.
fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    let n = y.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            (prefix[i + k + 1] - prefix[i - k]) / (2 * k + 1) as f64
        })
        .collect()
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if v.len() % 2 == 1 {
        m
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + m) / 2.0
    }
}

pub fn estimate_background(y: &[f64], window: usize) -> Result<Vec<f64>, SpectralError> {
    if window < 3 {
        return Err(SpectralError::BadParams(format!("background window must be >= 3 channels, got {window}")));
    }
    if window > y.len() {
        return Err(SpectralError::BadParams(format!("background window {window} exceeds spectrum length {}", y.len())));
    }
    let half = window / 2;
    let opened = running_extreme(&running_extreme(y, half, true), half, false);
    let mut bg = moving_average(&opened, half);

    // Opening hugs the lower noise envelope; lift it by local medians.
    let block = (5 * window).min(y.len());
    let n_blocks = y.len().div_ceil(block);
    let mut centers = Vec::with_capacity(n_blocks);
    let mut offsets = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let lo = b * block;
        let hi = ((b + 1) * block).min(y.len());
        let mut d: Vec<f64> = (lo..hi).map(|i| y[i] - bg[i]).collect();
        centers.push((lo + hi - 1) as f64 / 2.0);
        offsets.push(median(&mut d));
    }
    for (i, v) in bg.iter_mut().enumerate() {
        let t = i as f64;
        let j = centers.partition_point(|c| *c <= t);
        let off = if j == 0 {
            offsets[0]
        } else if j == centers.len() {
            offsets[centers.len() - 1]
        } else {
            let w = (t - centers[j - 1]) / (centers[j] - centers[j - 1]);
            offsets[j - 1] * (1.0 - w) + offsets[j] * w
        };
        *v += off;
    }
    Ok(bg)
}

pub fn subtract_background(y: &[f64], window: usize) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
    let bg = estimate_background(y, window)?;
    let data = y.iter().zip(&bg).map(|(a, b)| a - b).collect();
    Ok((data, bg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::profile::PseudoVoigt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn brute_min(y: &[f64], i: usize, half: usize) -> f64 {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(y.len() - 1);
        y[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn running_min_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..300).map(|_| n.sample(&mut rng)).collect();
        let m = running_extreme(&y, 7, true);
        for i in 0..y.len() {
            assert_eq!(m[i], brute_min(&y, i, 7));
        }
    }

    #[test]
    fn constant_spectrum() {
        let y = vec![100.0; 2000];
        let bg = estimate_background(&y, 101).unwrap();
        assert!(bg.iter().all(|v| (v - 100.0).abs() < 1e-6));
    }

    #[test]
    fn narrow_peak_ignored() {
        let x: Vec<f64> = (0..2000).map(|i| i as f64 * 0.0333).collect();
        let mut y = vec![100.0; 2000];
        PseudoVoigt::new(x[1000], 1000.0, 0.12, 0.0).accumulate(&x, &mut y);
        let bg = estimate_background(&y, 101).unwrap();
        for i in 980..1020 {
            assert!((bg[i] - 100.0).abs() <= 1.0, "{i}: {}", bg[i]);
        }
    }

    #[test]
    fn ramp_with_peaks() {
        let x: Vec<f64> = (0..3000).map(|i| i as f64 * 0.0333).collect();
        let ramp: Vec<f64> = (0..3000).map(|i| 50.0 + 0.1 * i as f64).collect();
        let mut y = ramp.clone();
        let centers = [700usize, 1500, 2300];
        for &c in &centers {
            PseudoVoigt::new(x[c], 800.0, 0.12, 0.0).accumulate(&x, &mut y);
        }
        let bg = estimate_background(&y, 101).unwrap();
        for i in 60..2940 {
            if centers.iter().any(|&c| (i as i64 - c as i64).abs() < 20) {
                continue;
            }
            assert!((bg[i] - ramp[i]).abs() / ramp[i] < 0.02, "{i}: {} vs {}", bg[i], ramp[i]);
        }
    }

    #[test]
    fn noisy_data_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 10.0).unwrap();
        let y: Vec<f64> = (0..5000).map(|_| 300.0 + n.sample(&mut rng)).collect();
        let (mut data, _) = subtract_background(&y, 101).unwrap();
        assert!(median(&mut data).abs() < 1.0);
    }

    #[test]
    fn window_errors() {
        assert!(estimate_background(&[1.0; 10], 2).is_err());
        assert!(estimate_background(&[1.0; 10], 11).is_err());
    }
}
