//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SpectralError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { n_init: 10, max_iter: 300, tol: 1e-10, seed: 0 }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if t < *w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            // All points coincide with existing centroids.
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d[i] = d[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, m)| (c, dist2(p, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("k >= 1");
        labels[i] = best;
        inertia += d;
    }
    inertia
}

fn lloyd(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> KMeansResult {
    let dim = points[0].len();
    let mut centroids = plus_plus(points, k, rng);
    let mut labels = vec![0; points.len()];
    let mut inertia = assign(points, &centroids, &mut labels);
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..dim {
                sums[l][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
            // An empty cluster keeps its previous centroid.
        }
        let next = assign(points, &centroids, &mut labels);
        let improved = inertia - next;
        inertia = next;
        if improved <= cfg.tol * inertia.max(1.0) {
            break;
        }
    }
    KMeansResult { labels, centroids, inertia, iterations }
}

pub fn kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<KMeansResult, SpectralError> {
    if k == 0 {
        return Err(SpectralError::BadParams("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(SpectralError::BadParams(format!("k = {k} exceeds {} records", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(SpectralError::BadParams("features must be finite and of equal length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.n_init.max(1) {
        let r = lloyd(points, k, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Clusters per-record feature vectors (e.g. normalized Li and H values).
pub fn classify_minerals(features: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, SpectralError> {
    kmeans(features, k, &KMeansConfig { seed, ..Default::default() })
}
