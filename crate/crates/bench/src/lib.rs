//! Inputs shared by the benchmarks.

use std::sync::Arc;

use gantrylab_core::sim::{LibsConfig, LibsModel, LineDb, Phantom};
use gantrylab_core::vision::{project, CameraExtrinsics, CameraIntrinsics, Correspondence};
use gantrylab_core::{SimTime, Spectrum};

/// A noisy shot on the demo phantom's spodumene stripe.
pub fn spodumene_shot() -> Spectrum {
    let model = LibsModel::new(LibsConfig::default(), Arc::new(LineDb::bundled()), Arc::new(Phantom::demo()), 42);
    model.fire(102.0, 102.0, 1, SimTime::ZERO, true)
}

/// A 7 x 5 planar target seen by the default camera, noise free.
pub fn board_view() -> (Vec<Correspondence>, CameraIntrinsics) {
    let k = CameraIntrinsics::default();
    let e = CameraExtrinsics {
        r: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
        t: [-100.0, 80.0, 600.0],
    };
    let mut out = Vec::new();
    for j in 0..5 {
        for i in 0..7 {
            let w = [-50.0 + 50.0 * i as f64, -20.0 + 50.0 * j as f64, 0.0];
            let (u, v) = project(w, &k, &e).expect("in front of the camera");
            out.push(Correspondence { world: w, pixel: [u, v] });
        }
    }
    (out, k)
}
