//! Automated LIBS data reduction: background subtraction and peak search,
//! pseudo-Voigt fits, a residual pass for interfering lines, element
//! indexing, then maps and clustering over many records.

pub mod background;
pub mod fit;
pub mod index;
pub mod kmeans;
pub mod map;
pub mod peaks;
pub mod pipeline;
pub mod profile;
pub mod residual;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SpectralError {
    #[error("BAD_PARAMS: {0}")]
    BadParams(String),
}

pub use background::{estimate_background, subtract_background};
pub use fit::{fit_peaks, FitConfig, FittedPeak, Provenance};
pub use index::{index_elements, ElementAssignment, IndexConfig, UNASSIGNED};
pub use kmeans::{classify_minerals, kmeans, KMeansConfig, KMeansResult};
pub use map::{build_element_map, min_max_normalize, ElementMap};
pub use peaks::{find_peaks, noise_sigma, PeakCandidate};
pub use pipeline::{reduce_spectrum, reduce_to_summary, ReductionConfig, ReductionSummary};
pub use profile::PseudoVoigt;
pub use residual::{refit_residuals, RefitConfig};
