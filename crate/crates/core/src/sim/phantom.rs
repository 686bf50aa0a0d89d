//! Synthetic sample: a rectangular grid of cells with per-cell element
//! fractions. File format is documented in `docs/phantom.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Composition = BTreeMap<String, f64>;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom file: {0}")]
    Io(#[from] std::io::Error),
    #[error("phantom file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("phantom field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    #[serde(default)]
    pub name: String,
    /// Half-open column range `[start, end)`.
    pub cols: [usize; 2],
    pub rows: [usize; 2],
    pub composition: Composition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellOverride {
    pub col: usize,
    pub row: usize,
    pub composition: Composition,
}

/// On-disk form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// World (x, y) of the corner of cell (0, 0), mm.
    pub origin_mm: [f64; 2],
    pub cell_size_mm: f64,
    pub cols: usize,
    pub rows: usize,
    #[serde(default)]
    pub background: Composition,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub cells: Vec<CellOverride>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub origin_mm: [f64; 2],
    pub cell_size_mm: f64,
    pub cols: usize,
    pub rows: usize,
    cells: Vec<Composition>,
}

const DEMO: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/phantoms/demo.json"));

fn check_composition(field: &str, c: &Composition) -> Result<(), PhantomError> {
    let invalid = |reason: String| PhantomError::Invalid { field: field.to_string(), reason };
    let mut sum = 0.0;
    for (el, v) in c {
        if !(v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(invalid(format!("fraction of {el} must be in [0, 1], got {v}")));
        }
        sum += v;
    }
    if sum > 1.0 + 1e-9 {
        return Err(invalid(format!("fractions sum to {sum} > 1")));
    }
    Ok(())
}

impl Phantom {
    pub fn from_spec(spec: PhantomSpec) -> Result<Phantom, PhantomError> {
        let invalid = |field: &str, reason: &str| PhantomError::Invalid { field: field.into(), reason: reason.into() };
        if !(spec.cell_size_mm.is_finite() && spec.cell_size_mm > 0.0) {
            return Err(invalid("cell_size_mm", "must be > 0"));
        }
        if spec.cols == 0 || spec.rows == 0 {
            return Err(invalid("cols", "grid must have at least one cell"));
        }
        if spec.origin_mm.iter().any(|v| !v.is_finite()) {
            return Err(invalid("origin_mm", "must be finite"));
        }
        check_composition("background", &spec.background)?;
        let mut cells = vec![spec.background.clone(); spec.cols * spec.rows];
        for (i, r) in spec.regions.iter().enumerate() {
            let field = format!("regions[{i}]");
            check_composition(&format!("{field}.composition"), &r.composition)?;
            if r.cols[0] > r.cols[1] || r.cols[1] > spec.cols || r.rows[0] > r.rows[1] || r.rows[1] > spec.rows {
                return Err(PhantomError::Invalid { field, reason: "range outside the grid".into() });
            }
            for row in r.rows[0]..r.rows[1] {
                for col in r.cols[0]..r.cols[1] {
                    cells[row * spec.cols + col] = r.composition.clone();
                }
            }
        }
        for (i, c) in spec.cells.iter().enumerate() {
            let field = format!("cells[{i}]");
            check_composition(&format!("{field}.composition"), &c.composition)?;
            if c.col >= spec.cols || c.row >= spec.rows {
                return Err(PhantomError::Invalid { field, reason: "cell outside the grid".into() });
            }
            cells[c.row * spec.cols + c.col] = c.composition.clone();
        }
        Ok(Phantom { origin_mm: spec.origin_mm, cell_size_mm: spec.cell_size_mm, cols: spec.cols, rows: spec.rows, cells })
    }

    pub fn parse(text: &str) -> Result<Phantom, PhantomError> {
        Phantom::from_spec(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Phantom, PhantomError> {
        Phantom::parse(&std::fs::read_to_string(path)?)
    }

    /// The bundled demo sample: quartz matrix, a Li-rich spodumene stripe,
    /// feldspar, albite and mica patches.
    pub fn demo() -> Phantom {
        Phantom::parse(DEMO).expect("bundled phantom parses")
    }

    /// A single-cell phantom of uniform composition centred on (x, y).
    pub fn uniform(center: [f64; 2], size_mm: f64, composition: Composition) -> Result<Phantom, PhantomError> {
        Phantom::from_spec(PhantomSpec {
            origin_mm: [center[0] - size_mm / 2.0, center[1] - size_mm / 2.0],
            cell_size_mm: size_mm,
            cols: 1,
            rows: 1,
            background: composition,
            regions: vec![],
            cells: vec![],
        })
    }

    /// World rectangle `[x0, y0, x1, y1]`.
    pub fn bounds(&self) -> [f64; 4] {
        let [x0, y0] = self.origin_mm;
        [x0, y0, x0 + self.cols as f64 * self.cell_size_mm, y0 + self.rows as f64 * self.cell_size_mm]
    }

    pub fn center(&self) -> [f64; 2] {
        let b = self.bounds();
        [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0]
    }

    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = ((x - self.origin_mm[0]) / self.cell_size_mm).floor();
        let cy = ((y - self.origin_mm[1]) / self.cell_size_mm).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.cols as f64 || cy >= self.rows as f64 {
            return None;
        }
        Some((cx as usize, cy as usize))
    }

    pub fn cell(&self, col: usize, row: usize) -> &Composition {
        &self.cells[row * self.cols + col]
    }

    pub fn composition_at(&self, x: f64, y: f64) -> Option<&Composition> {
        self.cell_index(x, y).map(|(c, r)| self.cell(c, r))
    }

    pub fn fraction_at(&self, x: f64, y: f64, element: &str) -> f64 {
        self.composition_at(x, y).and_then(|c| c.get(element).copied()).unwrap_or(0.0)
    }

    /// Returns a copy with every cell's fraction of `element` multiplied by `k`.
    pub fn scaled(&self, element: &str, k: f64) -> Phantom {
        let mut p = self.clone();
        for c in &mut p.cells {
            if let Some(v) = c.get_mut(element) {
                *v *= k;
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_has_li_stripe_and_valid_cells() {
        let p = Phantom::demo();
        let li = (0..p.rows).flat_map(|r| (0..p.cols).map(move |c| (c, r))).filter(|&(c, r)| p.cell(c, r).get("Li").copied().unwrap_or(0.0) > 0.0).count();
        assert!(li * 10 >= p.cols * p.rows, "stripe must hold >= 10% of cells");
        for c in &p.cells {
            assert!(c.values().sum::<f64>() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn lookup_and_outside() {
        let p = Phantom::demo();
        let b = p.bounds();
        assert!(p.composition_at(b[0] - 0.01, b[1]).is_none());
        assert!(p.composition_at(b[2], b[3]).is_none());
        assert_eq!(p.cell_index(b[0] + 1e-9, b[1] + 1e-9), Some((0, 0)));
    }

    #[test]
    fn invalid_fractions_name_the_field() {
        let text = r#"{"origin_mm":[0,0],"cell_size_mm":1,"cols":2,"rows":2,
            "regions":[{"cols":[0,1],"rows":[0,1],"composition":{"Li":0.7,"Si":0.6}}]}"#;
        let err = Phantom::parse(text).unwrap_err();
        assert!(err.to_string().contains("regions[0].composition"), "{err}");
        let text = r#"{"origin_mm":[0,0],"cell_size_mm":0,"cols":2,"rows":2}"#;
        assert!(Phantom::parse(text).unwrap_err().to_string().contains("cell_size_mm"));
    }
}
