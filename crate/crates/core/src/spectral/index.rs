//! Element indexing by greedy iterative refinement.
//!
//! Each round scores every element by Σ(area × relative intensity) over its
//! database lines matched to unassigned peaks within `tol_nm`, accepts the
//! best element if its score clears `accept_threshold`, and removes the
//! matched peaks from the pool.

use serde::{Deserialize, Serialize};

use super::fit::FittedPeak;
use super::SpectralError;
use crate::sim::linedb::LineDb;

pub const UNASSIGNED: &str = "UNASSIGNED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementAssignment {
    /// Index into the peak list passed to [`index_elements`].
    pub peak: usize,
    pub center_nm: f64,
    pub area: f64,
    /// Element symbol or [`UNASSIGNED`].
    pub element: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub species: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub line_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_nm: Option<f64>,
}

impl ElementAssignment {
    pub fn is_assigned(&self) -> bool {
        self.element != UNASSIGNED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub tol_nm: f64,
    pub accept_threshold: f64,
    /// An element qualifies only if its strongest line is among the matches.
    pub require_strongest_line: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { tol_nm: 0.1, accept_threshold: 50.0, require_strongest_line: true }
    }
}

struct Candidate<'a> {
    element: &'a str,
    score: f64,
    /// (peak index, line index in db)
    matches: Vec<(usize, usize)>,
}

fn score_element<'a>(element: &'a str, peaks: &[FittedPeak], pool: &[bool], db: &LineDb, cfg: &IndexConfig) -> Candidate<'a> {
    let mut lines: Vec<usize> = (0..db.lines().len()).filter(|&i| db.lines()[i].element == element).collect();
    lines.sort_by(|&a, &b| db.lines()[b].relative_intensity.total_cmp(&db.lines()[a].relative_intensity));
    let mut used = vec![false; peaks.len()];
    let mut matches = Vec::new();
    let mut score = 0.0;
    for li in lines {
        let line = &db.lines()[li];
        let best = (0..peaks.len())
            .filter(|&k| pool[k] && !used[k])
            .map(|k| (k, (peaks[k].center_nm - line.wavelength_nm).abs()))
            .filter(|&(_, d)| d <= cfg.tol_nm)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, _)) = best {
            used[k] = true;
            score += peaks[k].area * line.relative_intensity;
            matches.push((k, li));
        }
    }
    Candidate { element, score, matches }
}

pub fn index_elements(peaks: &[FittedPeak], db: &LineDb, cfg: &IndexConfig) -> Result<Vec<ElementAssignment>, SpectralError> {
    if db.is_empty() {
        return Err(SpectralError::BadParams("line database is empty".into()));
    }
    if !(cfg.tol_nm > 0.0) {
        return Err(SpectralError::BadParams(format!("tol_nm must be > 0, got {}", cfg.tol_nm)));
    }
    let mut out: Vec<ElementAssignment> = peaks
        .iter()
        .enumerate()
        .map(|(k, p)| ElementAssignment {
            peak: k,
            center_nm: p.center_nm,
            area: p.area,
            element: UNASSIGNED.to_string(),
            species: None,
            line_nm: None,
            residual_nm: None,
        })
        .collect();
    let mut pool = vec![true; peaks.len()];
    let mut remaining: Vec<&str> = db.elements().into_iter().collect();
    loop {
        let mut best: Option<Candidate> = None;
        for &el in &remaining {
            let c = score_element(el, peaks, &pool, db, cfg);
            if c.matches.is_empty() || c.score < cfg.accept_threshold {
                continue;
            }
            if cfg.require_strongest_line {
                let strongest = db.strongest_line(el).map(|l| l.wavelength_nm);
                if !c.matches.iter().any(|&(_, li)| Some(db.lines()[li].wavelength_nm) == strongest) {
                    continue;
                }
            }
            if best.as_ref().is_none_or(|b| c.score > b.score) {
                best = Some(c);
            }
        }
        let Some(win) = best else { break };
        for &(k, li) in &win.matches {
            let line = &db.lines()[li];
            pool[k] = false;
            let a = &mut out[k];
            a.element = line.element.clone();
            a.species = Some(line.species.clone());
            a.line_nm = Some(line.wavelength_nm);
            a.residual_nm = Some(peaks[k].center_nm - line.wavelength_nm);
        }
        remaining.retain(|e| *e != win.element);
    }
    Ok(out)
}

/// Distinct assigned elements, sorted.
pub fn elements_found(assignments: &[ElementAssignment]) -> Vec<String> {
    let mut v: Vec<String> = assignments.iter().filter(|a| a.is_assigned()).map(|a| a.element.clone()).collect();
    v.sort();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fit::Provenance;
    use crate::spectral::profile::PseudoVoigt;

    fn peak(nm: f64, area: f64) -> FittedPeak {
        let mut p = FittedPeak::from_profile(PseudoVoigt::new(nm, 1.0, 0.1, 0.05), 0.0, Provenance::PrimaryPass);
        p.area = area;
        p
    }

    #[test]
    fn empty_inputs() {
        assert!(index_elements(&[], &LineDb::bundled(), &IndexConfig::default()).unwrap().is_empty());
        assert!(index_elements(&[peak(670.8, 1.0)], &LineDb::default(), &IndexConfig::default()).is_err());
    }

    #[test]
    fn li_lines_assign_li_only() {
        let peaks = [peak(670.79, 2000.0), peak(610.36, 600.0), peak(700.0, 300.0)];
        let a = index_elements(&peaks, &LineDb::bundled(), &IndexConfig::default()).unwrap();
        assert_eq!(elements_found(&a), vec!["Li".to_string()]);
        assert_eq!(a[2].element, UNASSIGNED);
        for x in a.iter().filter(|x| x.is_assigned()) {
            assert!(x.residual_nm.unwrap().abs() <= 0.1);
        }
    }

    #[test]
    fn ambiguous_peak_goes_to_multi_line_element() {
        let db = LineDb::parse(
            "A 500.00 1.0 A I\nA 520.00 0.8 A I\nA 540.00 0.8 A I\nA 560.00 0.8 A I\nB 500.10 1.0 B I\nB 600.00 0.2 B I\n",
        )
        .unwrap();
        let peaks = [peak(500.05, 100.0), peak(520.0, 100.0), peak(540.0, 100.0), peak(560.0, 100.0)];
        let cfg = IndexConfig { accept_threshold: 1.0, ..Default::default() };
        let a = index_elements(&peaks, &db, &cfg).unwrap();
        // Brute force: A scores 100 + 3*80 = 340, B scores 100.
        assert_eq!(a[0].element, "A");
        assert_eq!(elements_found(&a), vec!["A".to_string()]);
    }

    #[test]
    fn weak_line_alone_does_not_qualify() {
        // A peak on Li 610 without Li 670 is left unassigned.
        let a = index_elements(&[peak(610.354, 5000.0)], &LineDb::bundled(), &IndexConfig::default()).unwrap();
        assert_eq!(a[0].element, UNASSIGNED);
    }
}
