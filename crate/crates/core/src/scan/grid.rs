use serde::{Deserialize, Serialize};

use super::ScanError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub col: usize,
    pub row: usize,
    pub x_mm: f64,
    pub y_mm: f64,
}

/// Inclusive-endpoint, row-major measurement grid: rows run along y, and
/// within a row x increases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub origin_mm: [f64; 2],
    pub extent_mm: [f64; 2],
    pub pitch_mm: f64,
    pub cols: usize,
    pub rows: usize,
    /// Height at which the analyzer measures.
    pub z_ref_mm: f64,
    /// Travel height between points.
    pub safe_z_mm: f64,
    #[serde(skip)]
    points: Vec<GridPoint>,
}

/// Tolerance on `extent / pitch` so 4 / 0.2 counts as 20 steps.
const STEP_EPS: f64 = 1e-9;

fn steps(extent: f64, pitch: f64) -> usize {
    (extent / pitch + STEP_EPS).floor() as usize
}

pub fn plan_grid(origin: [f64; 2], extent: [f64; 2], pitch: f64) -> Result<ScanGrid, ScanError> {
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(ScanError::BadParams(format!("pitch must be > 0, got {pitch}")));
    }
    if extent.iter().chain(origin.iter()).any(|v| !v.is_finite()) || extent.iter().any(|v| *v < 0.0) {
        return Err(ScanError::BadParams("extent must be >= 0 and finite".into()));
    }
    let cols = steps(extent[0], pitch) + 1;
    let rows = steps(extent[1], pitch) + 1;
    let mut g = ScanGrid { origin_mm: origin, extent_mm: extent, pitch_mm: pitch, cols, rows, z_ref_mm: 0.0, safe_z_mm: 0.0, points: Vec::new() };
    g.rebuild();
    Ok(g)
}

impl ScanGrid {
    fn rebuild(&mut self) {
        self.points = (0..self.rows)
            .flat_map(|row| (0..self.cols).map(move |col| (col, row)))
            .enumerate()
            .map(|(index, (col, row))| GridPoint {
                index,
                col,
                row,
                x_mm: self.origin_mm[0] + col as f64 * self.pitch_mm,
                y_mm: self.origin_mm[1] + row as f64 * self.pitch_mm,
            })
            .collect();
    }

    /// An empty plan: zero points.
    pub fn empty() -> ScanGrid {
        ScanGrid { origin_mm: [0.0; 2], extent_mm: [0.0; 2], pitch_mm: 1.0, cols: 0, rows: 0, z_ref_mm: 0.0, safe_z_mm: 0.0, points: Vec::new() }
    }

    pub fn with_heights(mut self, z_ref_mm: f64, safe_z_mm: f64) -> ScanGrid {
        self.z_ref_mm = z_ref_mm;
        self.safe_z_mm = safe_z_mm;
        self
    }

    /// Restores derived points after deserialization.
    pub fn restored(mut self) -> ScanGrid {
        self.rebuild();
        self
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every point and both heights must lie inside the travel limits.
    pub fn check_limits(&self, limits: [f64; 3]) -> Result<(), ScanError> {
        let inside = |v: f64, l: f64| (0.0..=l).contains(&v);
        let offenders: Vec<usize> =
            self.points.iter().filter(|p| !inside(p.x_mm, limits[0]) || !inside(p.y_mm, limits[1])).map(|p| p.index).collect();
        if !offenders.is_empty() {
            let shown: Vec<String> = offenders.iter().take(10).map(|i| i.to_string()).collect();
            return Err(ScanError::OutOfRange {
                message: format!(
                    "{} grid points outside travel limits (first: {}{})",
                    offenders.len(),
                    shown.join(", "),
                    if offenders.len() > 10 { ", ..." } else { "" }
                ),
                offenders,
            });
        }
        for (name, z) in [("z_ref_mm", self.z_ref_mm), ("safe_z_mm", self.safe_z_mm)] {
            if !inside(z, limits[2]) {
                return Err(ScanError::OutOfRange { message: format!("{name} = {z} outside z travel"), offenders: vec![] });
            }
        }
        if self.safe_z_mm < self.z_ref_mm {
            return Err(ScanError::BadParams("safe_z_mm must be >= z_ref_mm".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_ten_at_point_two() {
        let g = plan_grid([100.0, 100.0], [4.0, 10.0], 0.2).unwrap();
        assert_eq!((g.cols, g.rows, g.len()), (21, 51, 1071));
        let last = g.points()[1070];
        assert!((last.x_mm - 104.0).abs() < 1e-9 && (last.y_mm - 110.0).abs() < 1e-9);
        assert_eq!(g.points()[1].col, 1);
        assert_eq!(g.points()[21].row, 1);
    }

    #[test]
    fn zero_extent_is_one_point() {
        let g = plan_grid([5.0, 6.0], [0.0, 0.0], 0.7).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!((g.points()[0].x_mm, g.points()[0].y_mm), (5.0, 6.0));
    }

    #[test]
    fn bad_pitch() {
        assert!(matches!(plan_grid([0.0; 2], [1.0; 2], 0.0), Err(ScanError::BadParams(_))));
    }

    #[test]
    fn escaping_grid_lists_offenders() {
        let g = plan_grid([729.0, 0.0], [2.0, 0.0], 1.0).unwrap();
        match g.check_limits([730.0, 810.0, 100.0]) {
            Err(ScanError::OutOfRange { offenders, .. }) => assert_eq!(offenders, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn unique_row_major(ox in 0.0..100.0f64, oy in 0.0..100.0f64, w in 0.0..5.0f64, h in 0.0..5.0f64, p in 0.1..2.0f64) {
            let g = plan_grid([ox, oy], [w, h], p).unwrap();
            prop_assert_eq!(g.len(), ((w / p + 1e-9).floor() as usize + 1) * ((h / p + 1e-9).floor() as usize + 1));
            for pair in g.points().windows(2) {
                let (a, b) = (pair[0], pair[1]);
                prop_assert!((b.row, b.col) > (a.row, a.col));
                prop_assert!(b.y_mm > a.y_mm || (b.y_mm == a.y_mm && b.x_mm > a.x_mm));
            }
            prop_assert!(g.check_limits([730.0, 810.0, 100.0]).is_ok());
        }
    }
}
