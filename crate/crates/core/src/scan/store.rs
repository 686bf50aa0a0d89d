//! Scan directory: `manifest.json`, `records.jsonl`, `spectra/NNNN.csv`.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MeasurementRecord, ScanError, ScanGrid};
use crate::spectrum::{Spectrum, WavelengthGrid};

pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.jsonl";
pub const SPECTRA_DIR: &str = "spectra";
pub const FORMAT: &str = "gantrylab-scan/1";
pub const CSV_HEADER: &str = "wavelength_nm,intensity";

/// CSV text of a spectrum. Numbers use the shortest representation that
/// round-trips, with `.` as decimal point regardless of locale.
pub fn spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::with_capacity(s.len() * 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, v) in s.intensities.iter().enumerate() {
        use std::fmt::Write as _;
        writeln!(out, "{},{}", s.grid.wavelength(i), v).expect("writing to a String");
    }
    out
}

pub fn export_csv(s: &Spectrum, path: &Path) -> Result<(), ScanError> {
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, spectrum_csv(s)).map_err(|e| ScanError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ScanError::io(path, e))
}

/// Parses a spectrum CSV. The grid is recovered from the first and last
/// wavelengths.
pub fn parse_csv(text: &str) -> Result<Spectrum, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(format!("expected header `{CSV_HEADER}`"));
    }
    let mut w = Vec::new();
    let mut y = Vec::new();
    for (i, line) in lines.enumerate() {
        let (a, b) = line.split_once(',').ok_or(format!("row {}: expected two columns", i + 1))?;
        w.push(a.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1))?);
        y.push(b.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1))?);
    }
    if w.len() < 2 {
        return Err("fewer than two rows".into());
    }
    let grid = WavelengthGrid { start_nm: w[0], end_nm: w[w.len() - 1], channels: w.len() };
    let s = Spectrum::new(grid, y);
    s.validate()?;
    Ok(s)
}

pub fn read_csv(path: &Path) -> Result<Spectrum, ScanError> {
    let text = fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
    parse_csv(&text).map_err(|e| ScanError::Format(format!("{}: {e}", path.display())))
}

pub fn spectrum_file_name(index: usize) -> String {
    format!("{SPECTRA_DIR}/{index:04}.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub grid: ScanGrid,
    pub n_points: usize,
    pub seed: u64,
}

pub fn read_records(path: &Path) -> Result<Vec<MeasurementRecord>, ScanError> {
    let f = File::open(path).map_err(|e| ScanError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| ScanError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ScanError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[MeasurementRecord]) -> Result<(), ScanError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| ScanError::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| ScanError::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ScanError::io(path, e))?;
    }
    w.flush().map_err(|e| ScanError::io(path, e))
}

/// An open scan directory. Records are appended one line at a time, so an
/// interrupted scan leaves at most one partial line, which `open` drops.
pub struct ScanStore {
    dir: PathBuf,
    records: Vec<MeasurementRecord>,
    done: BTreeSet<usize>,
    writer: File,
}

impl ScanStore {
    /// Creates the directory, or reopens it if it already holds a scan of
    /// the same grid.
    pub fn open(dir: &Path, manifest: &Manifest) -> Result<ScanStore, ScanError> {
        fs::create_dir_all(dir.join(SPECTRA_DIR)).map_err(|e| ScanError::io(dir, e))?;
        let mpath = dir.join(MANIFEST);
        if mpath.exists() {
            let text = fs::read_to_string(&mpath).map_err(|e| ScanError::io(&mpath, e))?;
            let mut existing: Manifest =
                serde_json::from_str(&text).map_err(|e| ScanError::Format(format!("{}: {e}", mpath.display())))?;
            existing.grid = existing.grid.restored();
            if existing != *manifest {
                return Err(ScanError::Format(format!("{} was written for a different scan; use a new --out directory", mpath.display())));
            }
        } else {
            let text = serde_json::to_string_pretty(manifest).map_err(|e| ScanError::Format(e.to_string()))?;
            fs::write(&mpath, text + "\n").map_err(|e| ScanError::io(&mpath, e))?;
        }
        let rpath = dir.join(RECORDS);
        let mut records = Vec::new();
        if rpath.exists() {
            let bytes = fs::read(&rpath).map_err(|e| ScanError::io(&rpath, e))?;
            let mut good = 0usize;
            let mut pos = 0usize;
            while let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') {
                let line = &bytes[pos..pos + nl];
                match serde_json::from_slice::<MeasurementRecord>(line) {
                    Ok(r) => records.push(r),
                    Err(_) => break,
                }
                pos += nl + 1;
                good = pos;
            }
            if good < bytes.len() {
                let f = OpenOptions::new().write(true).open(&rpath).map_err(|e| ScanError::io(&rpath, e))?;
                f.set_len(good as u64).map_err(|e| ScanError::io(&rpath, e))?;
            }
        }
        let done = records.iter().map(|r| r.index).collect();
        let writer = OpenOptions::new().create(true).append(true).open(&rpath).map_err(|e| ScanError::io(&rpath, e))?;
        Ok(ScanStore { dir: dir.to_path_buf(), records, done, writer })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_done(&self, index: usize) -> bool {
        self.done.contains(&index)
    }

    pub fn records(&self) -> &[MeasurementRecord] {
        &self.records
    }

    pub fn write_spectrum(&self, index: usize, s: &Spectrum) -> Result<String, ScanError> {
        let rel = spectrum_file_name(index);
        export_csv(s, &self.dir.join(&rel))?;
        Ok(rel)
    }

    pub fn append(&mut self, r: MeasurementRecord) -> Result<(), ScanError> {
        if self.done.contains(&r.index) {
            return Err(ScanError::Format(format!("record {} already written", r.index)));
        }
        let mut line = serde_json::to_vec(&r).map_err(|e| ScanError::Format(e.to_string()))?;
        line.push(b'\n');
        let path = self.dir.join(RECORDS);
        self.writer.write_all(&line).map_err(|e| ScanError::io(&path, e))?;
        self.writer.flush().map_err(|e| ScanError::io(&path, e))?;
        self.done.insert(r.index);
        self.records.push(r);
        Ok(())
    }
}
