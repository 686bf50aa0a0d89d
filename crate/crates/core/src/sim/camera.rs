//! RGB-D camera looking at the phantom plane. Renders by ray-plane
//! intersection; pixels off the phantom rectangle get the far depth.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::SimTime;
use crate::protocol::{ActionSpec, DeviceDescriptor, DeviceId, ParamKind, ParamSpec, Params};
use crate::runtime::{ActionRun, DriverBinding, Immediate, StartError};
use crate::vision::{back_project, camera_to_world, CameraExtrinsics, CameraIntrinsics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub far_depth_mm: f64,
    /// World z of the sample surface.
    pub plane_z_mm: f64,
    pub sample_rgb: [u8; 3],
    pub background_rgb: [u8; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 1920,
            height: 1080,
            intrinsics: CameraIntrinsics::default(),
            extrinsics: CameraExtrinsics::default(),
            far_depth_mm: 5000.0,
            plane_z_mm: 0.0,
            sample_rgb: [214, 196, 170],
            background_rgb: [24, 24, 28],
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.width == 0 || self.height == 0 {
            return Err(("width".into(), "image size must be non-zero".into()));
        }
        self.intrinsics.validate().map_err(|e| ("intrinsics".to_string(), e.to_string()))?;
        self.extrinsics.validate().map_err(|e| ("extrinsics".to_string(), e.to_string()))?;
        if !(self.far_depth_mm > 0.0) {
            return Err(("far_depth_mm".into(), "must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    /// Camera-frame z, mm, pixel-aligned with `rgb`.
    pub depth: Vec<f64>,
}

impl Frame {
    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    pub fn rgb_at(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.rgb)
    }

    pub fn write_depth_f64le(&self, mut w: impl Write) -> std::io::Result<()> {
        for d in &self.depth {
            w.write_all(&d.to_le_bytes())?;
        }
        Ok(())
    }
}

/// A rectangle `[x0, y0, x1, y1]` on the plane `z = plane_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    pub sample_rect: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct CameraSim {
    pub config: CameraConfig,
    pub scene: Option<Scene>,
}

impl CameraSim {
    pub fn new(config: CameraConfig, scene: Option<Scene>) -> CameraSim {
        CameraSim { config, scene }
    }

    /// Camera-frame depth of the plane along the ray through (u, v), if the
    /// ray meets the plane in front of the camera.
    pub fn plane_depth(&self, u: f64, v: f64) -> Option<(f64, [f64; 3])> {
        let k = &self.config.intrinsics;
        let e = &self.config.extrinsics;
        let dc = nalgebra::Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dw = e.rotation().transpose() * dc;
        let c = e.camera_center();
        if dw[2].abs() < 1e-15 {
            return None;
        }
        let s = (self.config.plane_z_mm - c[2]) / dw[2];
        if s <= 0.0 {
            return None;
        }
        // dc has unit z, so the ray parameter is the camera-frame depth.
        Some((s, [c[0] + s * dw[0], c[1] + s * dw[1], c[2] + s * dw[2]]))
    }

    fn on_sample(scene: &Scene, p: [f64; 3]) -> bool {
        let r = scene.sample_rect;
        p[0] >= r[0] && p[0] <= r[2] && p[1] >= r[1] && p[1] <= r[3]
    }

    pub fn capture(&self) -> Result<Frame, String> {
        let scene = self.scene.ok_or("scene not configured")?;
        let (w, h) = (self.config.width, self.config.height);
        let mut rgb = Vec::with_capacity(3 * w * h);
        let mut depth = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                match self.plane_depth(u as f64, v as f64) {
                    Some((d, p)) if Self::on_sample(&scene, p) => {
                        depth.push(d);
                        rgb.extend_from_slice(&self.config.sample_rgb);
                    }
                    _ => {
                        depth.push(self.config.far_depth_mm);
                        rgb.extend_from_slice(&self.config.background_rgb);
                    }
                }
            }
        }
        Ok(Frame { width: w, height: h, rgb, depth })
    }

    /// Depth at a pixel and its world position, as the front end's
    /// click-to-target does.
    pub fn locate(&self, u: f64, v: f64) -> Result<Params, String> {
        let scene = self.scene.ok_or("scene not configured")?;
        if !(u >= 0.0 && v >= 0.0 && u < self.config.width as f64 && v < self.config.height as f64) {
            return Err(format!("pixel ({u}, {v}) outside the image"));
        }
        let mut out = Params::new();
        match self.plane_depth(u, v) {
            Some((d, p)) if Self::on_sample(&scene, p) => {
                let pc = back_project(u, v, d, &self.config.intrinsics).map_err(|e| e.to_string())?;
                let pw = camera_to_world(pc, &self.config.extrinsics).map_err(|e| e.to_string())?;
                out.insert("depth_mm".into(), json!(d));
                out.insert("world_mm".into(), json!(pw));
                out.insert("on_sample".into(), json!(true));
            }
            _ => {
                out.insert("depth_mm".into(), json!(self.config.far_depth_mm));
                out.insert("on_sample".into(), json!(false));
                out.insert("warning".into(), json!("far depth: pixel is off the sample"));
            }
        }
        Ok(out)
    }
}

pub fn descriptor(id: &DeviceId, endpoint: &str) -> DeviceDescriptor {
    let px = Some("px");
    DeviceDescriptor {
        device_id: id.clone(),
        display_name: "RGB-D camera".into(),
        actions: vec![
            ActionSpec::new(id, "capture", vec![ParamSpec::optional("save_prefix", ParamKind::Text, None)]),
            ActionSpec::new(id, "locate", vec![ParamSpec::required("u", ParamKind::Number, px), ParamSpec::required("v", ParamKind::Number, px)]),
        ],
        endpoint: endpoint.to_string(),
    }
}

fn capture_params(cam: &CameraSim, save_prefix: Option<&str>) -> Result<Params, String> {
    let f = cam.capture()?;
    let on = f.depth.iter().filter(|d| **d != cam.config.far_depth_mm).count();
    let mut p = Params::new();
    p.insert("width".into(), json!(f.width));
    p.insert("height".into(), json!(f.height));
    p.insert("sample_pixels".into(), json!(on));
    p.insert("center_depth_mm".into(), json!(f.depth_at(f.width / 2, f.height / 2)));
    if let Some(prefix) = save_prefix {
        let rgb_path = format!("{prefix}.ppm");
        let depth_path = format!("{prefix}.depth.f64le");
        let io = |e: std::io::Error| e.to_string();
        f.write_ppm(std::io::BufWriter::new(std::fs::File::create(&rgb_path).map_err(io)?)).map_err(io)?;
        f.write_depth_f64le(std::io::BufWriter::new(std::fs::File::create(&depth_path).map_err(io)?)).map_err(io)?;
        p.insert("rgb_path".into(), json!(rgb_path));
        p.insert("depth_path".into(), json!(depth_path));
    }
    Ok(p)
}

pub fn binding(id: &DeviceId, cam: Arc<CameraSim>) -> DriverBinding {
    let c2 = cam.clone();
    DriverBinding::new(id.clone())
        .with_handler("capture", move |p: &Params, _now: SimTime| {
            let prefix = p.get("save_prefix").and_then(|v| v.as_str());
            let out = capture_params(&cam, prefix).map_err(StartError::Failed)?;
            Ok(Box::new(Immediate(Some(Ok(out)))) as Box<dyn ActionRun>)
        })
        .with_handler("locate", move |p: &Params, _now: SimTime| {
            let u = p.get("u").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            let v = p.get("v").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            Ok(Box::new(Immediate(Some(c2.locate(u, v)))) as Box<dyn ActionRun>)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::project;

    fn cam() -> CameraSim {
        CameraSim::new(CameraConfig::default(), Some(Scene { sample_rect: [99.5, 99.5, 104.5, 110.5] }))
    }

    #[test]
    fn frame_size() {
        let f = cam().capture().unwrap();
        assert_eq!((f.width, f.height), (1920, 1080));
        assert_eq!(f.rgb.len(), 1920 * 1080 * 3);
        assert_eq!(f.depth.len(), 1920 * 1080);
    }

    #[test]
    fn depth_at_sample_centre_matches_plane() {
        let c = cam();
        let (u, v) = project([102.0, 105.0, 0.0], &c.config.intrinsics, &c.config.extrinsics).unwrap();
        let f = c.capture().unwrap();
        let (ui, vi) = (u.round() as usize, v.round() as usize);
        // Oracle: camera centre height 600 above a level plane seen along a
        // ray with camera-frame z = 1 gives z_c = 600 for every pixel.
        assert!((f.depth_at(ui, vi) - 600.0).abs() < 1e-6);
        assert_eq!(f.rgb_at(ui, vi), c.config.sample_rgb);
        assert_eq!(f.depth_at(0, 0), c.config.far_depth_mm);
    }

    #[test]
    fn tilted_camera_depth_matches_closed_form() {
        let mut c = cam();
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.1).into_inner()
            * nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let center = nalgebra::Vector3::new(102.0, 105.0, 0.0);
        let t = nalgebra::Vector3::new(0.0, 0.0, 550.0) - r * center;
        c.config.extrinsics = CameraExtrinsics::from_matrix(&r, &t);
        let (u, v) = project([102.0, 105.0, 0.0], &c.config.intrinsics, &c.config.extrinsics).unwrap();
        let (d, p) = c.plane_depth(u, v).unwrap();
        assert!((d - 550.0).abs() < 1e-6, "{d}");
        assert!((p[0] - 102.0).abs() < 1e-9 && (p[1] - 105.0).abs() < 1e-9);
    }

    #[test]
    fn unconfigured_scene_errors() {
        assert!(CameraSim::new(CameraConfig::default(), None).capture().is_err());
    }

    #[test]
    fn locate_recovers_world_point() {
        let c = cam();
        let (u, v) = project([101.0, 108.0, 0.0], &c.config.intrinsics, &c.config.extrinsics).unwrap();
        let p = c.locate(u, v).unwrap();
        let w: Vec<f64> = serde_json::from_value(p["world_mm"].clone()).unwrap();
        assert!((w[0] - 101.0).abs() < 1e-9 && (w[1] - 108.0).abs() < 1e-9);
        assert_eq!(c.locate(0.0, 0.0).unwrap()["on_sample"], json!(false));
    }
}
