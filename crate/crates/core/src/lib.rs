//! Core of the gantry lab: wire protocol, device runtime, simulated
//! instruments, spectral reduction, vision, behavior trees and scans.

pub mod bt;
pub mod clock;
pub mod config;
pub mod lm;
pub mod net;
pub mod protocol;
pub mod runtime;
pub mod scan;
pub mod sim;
pub mod spectral;
pub mod spectrum;
pub mod vision;

pub use clock::{SimTime, VirtualClock};
pub use protocol::{ActionGoal, DeviceDescriptor, DeviceId, GoalId, GoalState, GoalStatus, Params};
pub use runtime::Runtime;
pub use scan::{MeasurementRecord, ScanGrid};
pub use spectrum::{Spectrum, WavelengthGrid};
