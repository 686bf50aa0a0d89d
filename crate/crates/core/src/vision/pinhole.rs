use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::VisionError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { fx: 1400.0, fy: 1400.0, cx: 960.0, cy: 540.0 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(VisionError::Domain("focal lengths must be > 0".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(VisionError::Domain("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// World-to-camera rotation `r` (row-major) and translation `t`, mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraExtrinsics {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl Default for CameraExtrinsics {
    /// Camera 600 mm above world (150, 150, 0), looking straight down.
    fn default() -> Self {
        CameraExtrinsics { r: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]], t: [-150.0, 150.0, 600.0] }
    }
}

impl CameraExtrinsics {
    pub fn identity() -> CameraExtrinsics {
        CameraExtrinsics { r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], t: [0.0; 3] }
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: &Vector3<f64>) -> CameraExtrinsics {
        let mut rr = [[0.0; 3]; 3];
        for (i, row) in rr.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        CameraExtrinsics { r: rr, t: [t[0], t[1], t[2]] }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.r[i][j])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.t[0], self.t[1], self.t[2])
    }

    /// Checks RᵀR = I and det R = +1 within 1e-9.
    pub fn validate(&self) -> Result<(), VisionError> {
        let r = self.rotation();
        if !r.iter().chain(self.t.iter()).all(|v| v.is_finite()) {
            return Err(VisionError::InvalidPose("non-finite entries".into()));
        }
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if err > 1e-9 {
            return Err(VisionError::InvalidPose(format!("R is not orthonormal (max |RᵀR - I| = {err:e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(VisionError::InvalidPose(format!("det R = {det}")));
        }
        Ok(())
    }

    /// Camera centre in world coordinates.
    pub fn camera_center(&self) -> [f64; 3] {
        let c = -(self.rotation().transpose() * self.translation());
        [c[0], c[1], c[2]]
    }
}

/// x_c = (u - c_x) z_c / f_x, y_c = (v - c_y) z_c / f_y.
pub fn back_project(u: f64, v: f64, z_c: f64, k: &CameraIntrinsics) -> Result<[f64; 3], VisionError> {
    if !(z_c >= 0.0) {
        return Err(VisionError::Domain(format!("depth must be >= 0, got {z_c}")));
    }
    Ok([(u - k.cx) * z_c / k.fx, (v - k.cy) * z_c / k.fy, z_c])
}

pub fn world_to_camera(p_w: [f64; 3], e: &CameraExtrinsics) -> Result<[f64; 3], VisionError> {
    e.validate()?;
    let p = e.rotation() * Vector3::from(p_w) + e.translation();
    Ok([p[0], p[1], p[2]])
}

/// P_w = R⁻¹ (P_c − T), with R⁻¹ = Rᵀ.
pub fn camera_to_world(p_c: [f64; 3], e: &CameraExtrinsics) -> Result<[f64; 3], VisionError> {
    e.validate()?;
    let p = e.rotation().transpose() * (Vector3::from(p_c) - e.translation());
    Ok([p[0], p[1], p[2]])
}

pub fn project(p_w: [f64; 3], k: &CameraIntrinsics, e: &CameraExtrinsics) -> Result<(f64, f64), VisionError> {
    let p = world_to_camera(p_w, e)?;
    if !(p[2] > 0.0) {
        return Err(VisionError::BehindCamera(p[2]));
    }
    Ok((k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy))
}

/// Pixel plus depth straight to world coordinates.
pub fn pixel_to_world(u: f64, v: f64, z_c: f64, k: &CameraIntrinsics, e: &CameraExtrinsics) -> Result<[f64; 3], VisionError> {
    camera_to_world(back_project(u, v, z_c, k)?, e)
}
