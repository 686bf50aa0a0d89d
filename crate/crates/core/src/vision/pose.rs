use nalgebra::{DMatrix, Matrix3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::pinhole::{project, CameraExtrinsics, CameraIntrinsics};
use super::VisionError;
use crate::lm::{minimize, LeastSquares, LmConfig, LmStop};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub world: [f64; 3],
    pub pixel: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub extrinsics: CameraExtrinsics,
    pub rms_px: f64,
    pub iterations: usize,
}

/// Rows of `x_w y_w z_w u v`; `#` comments and blank lines are skipped.
pub fn parse_correspondences(text: &str) -> Result<Vec<Correspondence>, VisionError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| VisionError::Parse { line: i + 1, reason: e.to_string() })?;
        if vals.len() != 5 {
            return Err(VisionError::Parse { line: i + 1, reason: format!("expected 5 columns, found {}", vals.len()) });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(VisionError::Parse { line: i + 1, reason: "non-finite value".into() });
        }
        out.push(Correspondence { world: [vals[0], vals[1], vals[2]], pixel: [vals[3], vals[4]] });
    }
    Ok(out)
}

/// Similarity that moves the centroid to 0 and the mean distance to √2.
fn normalizer(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n);
    let d = pts.iter().map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Ratio of the smaller to the larger principal spread of a 2D point set.
fn spread_ratio(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if hi <= 0.0 {
        0.0
    } else {
        (lo.max(0.0) / hi).sqrt()
    }
}

/// Normalized DLT: the homography taking plane points `src` to `dst`.
pub fn homography_dlt(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Matrix3<f64>, VisionError> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(VisionError::InsufficientPoints(src.len().min(dst.len())));
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let [x, y] = apply(&ts, *s);
        let [u, v] = apply(&td, *d);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("9 eigenvalues");
    let h = eig.eigenvectors.column(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(|| VisionError::Degenerate("image points coincide".into()))?;
    let out = td_inv * hn * ts;
    if !out.iter().all(|v| v.is_finite()) {
        return Err(VisionError::Degenerate("homography is not finite".into()));
    }
    Ok(out)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

struct Reprojection<'a> {
    corrs: &'a [Correspondence],
    k: &'a CameraIntrinsics,
    r0: Matrix3<f64>,
}

impl Reprojection<'_> {
    fn pose(&self, p: &[f64]) -> (Matrix3<f64>, Vector3<f64>) {
        let dr = Rotation3::new(Vector3::new(p[0], p[1], p[2])).into_inner();
        (dr * self.r0, Vector3::new(p[3], p[4], p[5]))
    }
}

impl LeastSquares for Reprojection<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        2 * self.corrs.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (r, t) = self.pose(p);
        for (i, c) in self.corrs.iter().enumerate() {
            let pc = r * Vector3::from(c.world) + t;
            out[2 * i] = self.k.fx * pc[0] / pc[2] + self.k.cx - c.pixel[0];
            out[2 * i + 1] = self.k.fy * pc[1] / pc[2] + self.k.cy - c.pixel[1];
        }
    }
}

fn reprojection_rms(corrs: &[Correspondence], k: &CameraIntrinsics, e: &CameraExtrinsics) -> f64 {
    let mut ss = 0.0;
    for c in corrs {
        match project(c.world, k, e) {
            Ok((u, v)) => ss += (u - c.pixel[0]).powi(2) + (v - c.pixel[1]).powi(2),
            Err(_) => return f64::INFINITY,
        }
    }
    (ss / corrs.len() as f64).sqrt()
}

/// Rotation angle of `a · bᵀ`, degrees.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    let sin = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos).to_degrees()
}

/// Pose of a camera viewing planar points (z_w = 0): homography by normalized
/// DLT, decomposition with K, projection onto SO(3), then damped least
/// squares on reprojection error.
pub fn estimate_extrinsics(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<PoseEstimate, VisionError> {
    if corrs.len() < 4 {
        return Err(VisionError::InsufficientPoints(corrs.len()));
    }
    k.validate()?;
    if let Some(c) = corrs.iter().find(|c| c.world[2].abs() > 1e-9) {
        return Err(VisionError::Degenerate(format!("world points must lie on z_w = 0 (found z_w = {})", c.world[2])));
    }
    if corrs.iter().any(|c| !c.world.iter().chain(c.pixel.iter()).all(|v| v.is_finite())) {
        return Err(VisionError::Domain("non-finite correspondence".into()));
    }
    let plane: Vec<[f64; 2]> = corrs.iter().map(|c| [c.world[0], c.world[1]]).collect();
    let image: Vec<[f64; 2]> = corrs.iter().map(|c| [(c.pixel[0] - k.cx) / k.fx, (c.pixel[1] - k.cy) / k.fy]).collect();
    if spread_ratio(&plane) < 1e-6 || spread_ratio(&image) < 1e-9 {
        return Err(VisionError::Degenerate("points are collinear".into()));
    }
    let h = homography_dlt(&plane, &image)?;
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let scale = 2.0 / (h1.norm() + h2.norm());
    // The plane must be in front of the camera.
    let sign = if h3[2] * scale < 0.0 { -1.0 } else { 1.0 };
    let l = sign * scale;
    let r1 = h1 * l;
    let r2 = h2 * l;
    let r3 = r1.cross(&r2);
    let r0 = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    let t0 = h3 * l;

    let problem = Reprojection { corrs, k, r0 };
    let cfg = LmConfig { cost_tolerance: 0.0, ..LmConfig::default() };
    let rep = minimize(&problem, &[0.0, 0.0, 0.0, t0[0], t0[1], t0[2]], &cfg);
    if rep.stop == LmStop::NonFinite || !rep.cost.is_finite() {
        return Err(VisionError::NoConvergence("reprojection error is not finite".into()));
    }
    if rep.cost > rep.initial_cost {
        return Err(VisionError::NoConvergence("refinement diverged".into()));
    }
    let (r, t) = problem.pose(&rep.params);
    let extrinsics = CameraExtrinsics::from_matrix(&nearest_rotation(&r), &t);
    extrinsics.validate()?;
    let rms_px = reprojection_rms(corrs, k, &extrinsics);
    Ok(PoseEstimate { extrinsics, rms_px, iterations: rep.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn board() -> Vec<[f64; 3]> {
        let mut v = Vec::new();
        for j in 0..5 {
            for i in 0..7 {
                v.push([-50.0 + 50.0 * i as f64, -20.0 + 50.0 * j as f64, 0.0]);
            }
        }
        v
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> CameraExtrinsics {
        let base = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(0.0..0.5);
        let r = Rotation3::new(axis.normalize() * angle).into_inner() * base;
        let center = Vector3::new(100.0, 80.0, 0.0);
        let t = Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(450.0..750.0)) - r * center;
        CameraExtrinsics::from_matrix(&r, &t)
    }

    fn synth(e: &CameraExtrinsics, k: &CameraIntrinsics, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Correspondence> {
        let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
        board()
            .into_iter()
            .map(|w| {
                let (u, v) = project(w, k, e).unwrap();
                let (du, dv) = if noise > 0.0 { (n.sample(rng), n.sample(rng)) } else { (0.0, 0.0) };
                Correspondence { world: w, pixel: [u + du, v + dv] }
            })
            .collect()
    }

    #[test]
    fn noise_free_exact() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let e = random_pose(&mut rng);
            let est = estimate_extrinsics(&synth(&e, &k, 0.0, &mut rng), &k).unwrap();
            assert!(est.rms_px < 1e-6, "{}", est.rms_px);
            est.extrinsics.validate().unwrap();
            assert!(rotation_angle_deg(&est.extrinsics.rotation(), &e.rotation()) < 1e-6);
        }
    }

    #[test]
    fn noisy_within_tolerance() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let e = random_pose(&mut rng);
            let est = estimate_extrinsics(&synth(&e, &k, 0.2, &mut rng), &k).unwrap();
            assert!(est.rms_px < 0.5);
            assert!(rotation_angle_deg(&est.extrinsics.rotation(), &e.rotation()) < 0.2);
        }
    }

    #[test]
    fn order_invariant() {
        let k = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_pose(&mut rng);
        let mut c = synth(&e, &k, 0.2, &mut rng);
        let a = estimate_extrinsics(&c, &k).unwrap();
        c.reverse();
        c.swap(3, 17);
        let b = estimate_extrinsics(&c, &k).unwrap();
        assert!(rotation_angle_deg(&a.extrinsics.rotation(), &b.extrinsics.rotation()) < 1e-7);
        for i in 0..3 {
            assert!((a.extrinsics.t[i] - b.extrinsics.t[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn error_cases() {
        let k = CameraIntrinsics::default();
        let c = Correspondence { world: [0.0; 3], pixel: [0.0; 2] };
        assert_eq!(estimate_extrinsics(&[c; 3], &k).unwrap_err(), VisionError::InsufficientPoints(3));
        let line: Vec<Correspondence> =
            (0..6).map(|i| Correspondence { world: [i as f64 * 10.0, 0.0, 0.0], pixel: [100.0 + i as f64, 200.0] }).collect();
        assert!(matches!(estimate_extrinsics(&line, &k), Err(VisionError::Degenerate(_))));
    }

    #[test]
    fn parse_rows() {
        let c = parse_correspondences("# x y z u v\n0 0 0 960 540\n10 0 0 983.3 540\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].pixel, [983.3, 540.0]);
        assert!(matches!(parse_correspondences("1 2 3 4\n"), Err(VisionError::Parse { line: 1, .. })));
    }
}
