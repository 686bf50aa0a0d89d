//! Scan planning, execution through a behavior tree, and the on-disk scan
//! directory.

mod grid;
mod record;
mod run;
mod store;
mod throughput;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use grid::{plan_grid, GridPoint, ScanGrid};
pub use record::{MeasurementRecord, Timing};
pub use run::{run_scan, scan_tasks, scan_tree_spec, ScanOptions, ScanOutcome, ScanPlan, ScanReport, ScanShared};
pub use store::{
    export_csv, parse_csv, read_csv, read_records, spectrum_csv, spectrum_file_name, write_records, Manifest, ScanStore,
    CSV_HEADER, FORMAT, MANIFEST, RECORDS, SPECTRA_DIR,
};
pub use throughput::{throughput_report, Throughput};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("out of range: {message}")]
    OutOfRange { message: String, offenders: Vec<usize> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("invalid scan tree: {0}")]
    Tree(#[from] crate::bt::BtError),
}

impl ScanError {
    pub fn io(path: &Path, source: std::io::Error) -> ScanError {
        ScanError::Io { path: path.to_path_buf(), source }
    }
}
