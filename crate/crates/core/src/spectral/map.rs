//! Min-max normalized element maps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::scan::MeasurementRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementMap {
    pub element: String,
    pub cols: usize,
    pub rows: usize,
    /// Row-major, `rows × cols`, values in [0, 1].
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

/// `(v - min) / (max - min)`; all zeros with `degenerate = true` when max = min.
pub fn min_max_normalize(raw: &[f64]) -> (Vec<f64>, f64, f64, bool) {
    if raw.is_empty() {
        return (Vec::new(), 0.0, 0.0, true);
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return (vec![0.0; raw.len()], min, max, true);
    }
    let span = max - min;
    (raw.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect(), min, max, false)
}

/// Per grid cell, the area of the element's largest-area assigned peak
/// (0 when absent or unmeasured), min-max normalized.
pub fn build_element_map(records: &[MeasurementRecord], element: &str, cols: usize, rows: usize) -> ElementMap {
    let mut raw = vec![0.0; cols * rows];
    let mut present = 0usize;
    for r in records {
        if r.index < raw.len() {
            if let Some(a) = r.reduction.element_area(element) {
                raw[r.index] = a;
                present += 1;
            }
        }
    }
    if present == 0 {
        warn!(element, "no record contains the element; map is all zero");
    }
    let (values, min, max, degenerate) = min_max_normalize(&raw);
    ElementMap { element: element.to_string(), cols, rows, values, raw, min, max, degenerate }
}

impl ElementMap {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Indices of the top `fraction` of cells by value (ties broken by index).
    pub fn top_cells(&self, fraction: f64) -> Vec<usize> {
        let n = ((self.values.len() as f64) * fraction).ceil() as usize;
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }

    /// Text export: `#` header lines, then one row of values per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# element {}", self.element).unwrap();
        writeln!(s, "# cols {}", self.cols).unwrap();
        writeln!(s, "# rows {}", self.rows).unwrap();
        writeln!(s, "# min {}", self.min).unwrap();
        writeln!(s, "# max {}", self.max).unwrap();
        writeln!(s, "# degenerate {}", self.degenerate).unwrap();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(c, r).to_string()).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<ElementMap, String> {
        let mut element = None;
        let (mut cols, mut rows, mut min, mut max, mut degenerate) = (None, None, 0.0, 0.0, false);
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix("# ") {
                let (k, v) = h.split_once(' ').ok_or(format!("line {}: bad header", i + 1))?;
                let bad = |_| format!("line {}: bad {k}", i + 1);
                match k {
                    "element" => element = Some(v.to_string()),
                    "cols" => cols = Some(v.parse::<usize>().map_err(|_| format!("line {}: bad cols", i + 1))?),
                    "rows" => rows = Some(v.parse::<usize>().map_err(|_| format!("line {}: bad rows", i + 1))?),
                    "min" => min = v.parse().map_err(bad)?,
                    "max" => max = v.parse().map_err(bad)?,
                    "degenerate" => degenerate = v == "true",
                    _ => {}
                }
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| format!("line {}: bad value `{tok}`", i + 1))?);
            }
        }
        let (cols, rows) = (cols.ok_or("missing cols")?, rows.ok_or("missing rows")?);
        if values.len() != cols * rows {
            return Err(format!("expected {} values, found {}", cols * rows, values.len()));
        }
        Ok(ElementMap { element: element.ok_or("missing element")?, cols, rows, raw: Vec::new(), values, min, max, degenerate })
    }
}
