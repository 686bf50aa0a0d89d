use serde::{Deserialize, Serialize};

use super::{MeasurementRecord, ScanError};
use crate::spectrum::CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub count: usize,
    pub span_s: f64,
    pub measurements_per_min: f64,
    /// Spectral channels acquired per second.
    pub channels_per_sec: f64,
}

pub fn throughput_report(records: &[MeasurementRecord]) -> Result<Throughput, ScanError> {
    if records.is_empty() {
        return Err(ScanError::BadParams("throughput needs at least one record".into()));
    }
    let start = records.iter().map(|r| r.timing.start_us).min().unwrap();
    let end = records.iter().map(|r| r.timing.end_us).max().unwrap();
    let span_s = end.saturating_sub(start) as f64 / 1e6;
    if span_s <= 0.0 {
        return Err(ScanError::BadParams("records span zero time".into()));
    }
    let n = records.len() as f64;
    Ok(Throughput {
        count: records.len(),
        span_s,
        measurements_per_min: n / (span_s / 60.0),
        channels_per_sec: n * CHANNELS as f64 / span_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::Timing;
    use crate::spectral::pipeline::ReductionSummary;

    fn rec(i: usize, start_s: u64, end_s: u64) -> MeasurementRecord {
        MeasurementRecord {
            index: i,
            col: i,
            row: 0,
            commanded_mm: [0.0; 3],
            achieved_mm: [0.0; 3],
            spectrum_path: String::new(),
            reduction: ReductionSummary::default(),
            timing: Timing { start_us: start_s * 1_000_000, end_us: end_s * 1_000_000, retries: 0 },
        }
    }

    #[test]
    fn four_per_minute() {
        let r: Vec<_> = (0..4).map(|i| rec(i, 15 * i as u64, 15 * (i as u64 + 1))).collect();
        let t = throughput_report(&r).unwrap();
        assert_eq!(t.measurements_per_min, 4.0);
        assert_eq!(t.channels_per_sec, 1520.0);
    }

    #[test]
    fn single_record_uses_own_span() {
        let t = throughput_report(&[rec(0, 10, 25)]).unwrap();
        assert_eq!(t.span_s, 15.0);
        assert_eq!(t.measurements_per_min, 4.0);
    }

    #[test]
    fn empty_is_bad_params() {
        assert!(matches!(throughput_report(&[]), Err(ScanError::BadParams(_))));
    }
}
