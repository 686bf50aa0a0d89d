use serde::{Deserialize, Serialize};

use crate::spectral::pipeline::ReductionSummary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    /// Virtual clock, microseconds.
    pub start_us: u64,
    pub end_us: u64,
    pub retries: u32,
}

impl Timing {
    pub fn start_s(&self) -> f64 {
        self.start_us as f64 / 1e6
    }

    pub fn end_s(&self) -> f64 {
        self.end_us as f64 / 1e6
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub index: usize,
    pub col: usize,
    pub row: usize,
    pub commanded_mm: [f64; 3],
    pub achieved_mm: [f64; 3],
    /// Relative to the scan directory.
    pub spectrum_path: String,
    pub reduction: ReductionSummary,
    pub timing: Timing,
}
