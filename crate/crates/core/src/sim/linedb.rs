//! Emission-line database.
//!
//! Text format, one line per emission line, whitespace-separated:
//!
//! ```text
//! # element  wavelength_nm  relative_intensity  species label...
//! Li         670.791        1.00                Li I
//! ```
//!
//! `#` starts a comment. The species label is the remainder of the line.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionLine {
    pub element: String,
    pub wavelength_nm: f64,
    pub relative_intensity: f64,
    pub species: String,
}

#[derive(Debug, Error)]
pub enum LineDbError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("reading line database: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LineDb {
    lines: Vec<EmissionLine>,
}

const BUNDLED: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/lines/default.lines"));

impl LineDb {
    pub fn new(mut lines: Vec<EmissionLine>) -> LineDb {
        lines.sort_by(|a, b| a.wavelength_nm.total_cmp(&b.wavelength_nm));
        LineDb { lines }
    }

    /// The curated set shipped with the crate (Li, Na, K, Si, H, Al, O).
    pub fn bundled() -> LineDb {
        LineDb::parse(BUNDLED).expect("bundled line database parses")
    }

    pub fn load(path: &Path) -> Result<LineDb, LineDbError> {
        LineDb::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<LineDb, LineDbError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |reason: String| LineDbError::Parse { line: i + 1, reason };
            let cols: Vec<&str> = content.split_whitespace().collect();
            if cols.len() < 4 {
                return Err(err(format!("expected 4+ columns, found {}", cols.len())));
            }
            let wavelength_nm: f64 = cols[1].parse().map_err(|_| err(format!("bad wavelength `{}`", cols[1])))?;
            let relative_intensity: f64 =
                cols[2].parse().map_err(|_| err(format!("bad relative intensity `{}`", cols[2])))?;
            if !(wavelength_nm.is_finite() && wavelength_nm > 0.0) {
                return Err(err("wavelength must be positive".into()));
            }
            if !(relative_intensity.is_finite() && relative_intensity > 0.0) {
                return Err(err("relative intensity must be positive".into()));
            }
            lines.push(EmissionLine {
                element: cols[0].to_string(),
                wavelength_nm,
                relative_intensity,
                species: cols[3..].join(" "),
            });
        }
        Ok(LineDb::new(lines))
    }

    pub fn lines(&self) -> &[EmissionLine] {
        &self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn elements(&self) -> BTreeSet<&str> {
        self.lines.iter().map(|l| l.element.as_str()).collect()
    }

    pub fn lines_of<'a, 'e>(&'a self, element: &'e str) -> impl Iterator<Item = &'a EmissionLine> + use<'a, 'e> {
        self.lines.iter().filter(move |l| l.element == element)
    }

    /// The element's highest relative-intensity line.
    pub fn strongest_line(&self, element: &str) -> Option<&EmissionLine> {
        self.lines_of(element).max_by(|a, b| a.relative_intensity.total_cmp(&b.relative_intensity))
    }
}
