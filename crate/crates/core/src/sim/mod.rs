//! Simulated instruments: gantry, LIBS analyzer, RGB-D camera, sharing one
//! sample phantom.

pub mod camera;
pub mod faults;
pub mod gantry;
pub mod libs;
pub mod linedb;
pub mod phantom;

use std::sync::Arc;

use crate::protocol::{DeviceDescriptor, DeviceId};
use crate::runtime::{DriverBinding, RegistrationHandle, Runtime, RuntimeError};

pub use camera::{CameraConfig, CameraSim, Frame, Scene};
pub use faults::FaultInjector;
pub use gantry::{GantryConfig, GantryState, SharedGantry};
pub use libs::{LibsConfig, LibsModel};
pub use linedb::{EmissionLine, LineDb};
pub use phantom::{Composition, Phantom};

pub const GANTRY: &str = "gantry";
pub const LIBS: &str = "libs";
pub const CAMERA: &str = "camera";

/// Everything needed to build the three simulated devices.
#[derive(Clone, Debug)]
pub struct WorldSpec {
    pub seed: u64,
    pub gantry: GantryConfig,
    pub libs: LibsConfig,
    pub camera: CameraConfig,
    pub phantom: Arc<Phantom>,
    pub line_db: Arc<LineDb>,
}

/// One simulated bench. Devices share the gantry state, so the analyzer
/// knows where it is and whether it is moving.
pub struct SimWorld {
    pub gantry: SharedGantry,
    pub libs: Arc<LibsModel>,
    pub camera: Arc<CameraSim>,
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k)
}

impl SimWorld {
    pub fn new(spec: &WorldSpec) -> SimWorld {
        let b = spec.phantom.bounds();
        SimWorld {
            gantry: GantryState::shared(spec.gantry.clone(), sub_seed(spec.seed, 1)),
            libs: Arc::new(LibsModel::new(spec.libs.clone(), spec.line_db.clone(), spec.phantom.clone(), sub_seed(spec.seed, 2))),
            camera: Arc::new(CameraSim::new(spec.camera.clone(), Some(Scene { sample_rect: b }))),
        }
    }

    pub fn device(&self, name: &str, endpoint: &str) -> Option<(DeviceDescriptor, DriverBinding)> {
        let id = DeviceId::new(name);
        match name {
            GANTRY => Some((gantry::descriptor(&id, endpoint), gantry::binding(&id, self.gantry.clone()))),
            LIBS => Some((libs::descriptor(&id, endpoint), libs::binding(&id, self.libs.clone(), self.gantry.clone()))),
            CAMERA => Some((camera::descriptor(&id, endpoint), camera::binding(&id, self.camera.clone()))),
            _ => None,
        }
    }

    /// Registers all three devices, optionally through a fault injector.
    pub fn register_all(
        &self,
        runtime: &Runtime,
        faults: Option<&FaultInjector>,
        endpoint: impl Fn(&str) -> String,
    ) -> Result<Vec<RegistrationHandle>, RuntimeError> {
        let mut out = Vec::new();
        for name in [GANTRY, LIBS, CAMERA] {
            let (desc, mut binding) = self.device(name, &endpoint(name)).expect("known device");
            if let Some(f) = faults {
                binding = f.wrap(binding);
            }
            out.push(runtime.register_device(desc, binding)?);
        }
        Ok(out)
    }

    /// A fresh runtime on its own virtual clock with all devices registered.
    pub fn in_process(spec: &WorldSpec, faults: Option<&FaultInjector>) -> Result<(Arc<Runtime>, SimWorld), RuntimeError> {
        let world = SimWorld::new(spec);
        let runtime = Arc::new(Runtime::new(Arc::new(crate::clock::VirtualClock::new())));
        world.register_all(&runtime, faults, |_| String::new())?;
        Ok((runtime, world))
    }
}

impl WorldSpec {
    /// Default instruments over the demo phantom and bundled line list.
    pub fn demo(seed: u64) -> WorldSpec {
        WorldSpec {
            seed,
            gantry: GantryConfig::default(),
            libs: LibsConfig::default(),
            camera: CameraConfig::default(),
            phantom: Arc::new(Phantom::demo()),
            line_db: Arc::new(LineDb::bundled()),
        }
    }
}
