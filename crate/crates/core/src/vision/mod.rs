//! Pinhole camera math and planar pose estimation.
//!
//! Frames: world is the gantry frame (same origin and axes), camera frame has
//! +z along the optical axis. `P_c = R · P_w + T`.

mod pinhole;
mod pose;

pub use pinhole::{back_project, camera_to_world, pixel_to_world, project, world_to_camera, CameraExtrinsics, CameraIntrinsics};
pub use pose::{
    estimate_extrinsics, homography_dlt, parse_correspondences, rotation_angle_deg, Correspondence, PoseEstimate,
};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum VisionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point is behind the camera (z_c = {0})")]
    BehindCamera(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("INSUFFICIENT_POINTS: need at least 4 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("DEGENERATE: {0}")]
    Degenerate(String),
    #[error("NO_CONVERGENCE: {0}")]
    NoConvergence(String),
    #[error("correspondence line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
