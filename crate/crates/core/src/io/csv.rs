//! The diagnostics CSV and an output sink that writes a run directory.
//!
//! Columns are fixed: `t, dt, mass_n, mass_m, mass_c, sup_m, sup_c,
//! grad_c_l2sq, u_l2sq, n_lp, entropy_n, energy, div_u_max, D1..D5, B1..B3`.
//! Numbers use Rust's shortest round-trip exponent form, so identical runs
//! give identical bytes.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{DiagnosticsRecord, DissipationLedger};
use crate::io::sink::OutputSink;
use crate::io::snapshot::{encode_snapshot, SnapshotError};
use crate::model::SimState;

pub const CSV_COLUMNS: [&str; 21] = [
    "t",
    "dt",
    "mass_n",
    "mass_m",
    "mass_c",
    "sup_m",
    "sup_c",
    "grad_c_l2sq",
    "u_l2sq",
    "n_lp",
    "entropy_n",
    "energy",
    "div_u_max",
    "D1",
    "D2",
    "D3",
    "D4",
    "D5",
    "B1",
    "B2",
    "B3",
];

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(r: &DiagnosticsRecord, l: &DissipationLedger) -> String {
    let head = [
        r.t,
        r.dt,
        r.mass_n,
        r.mass_m,
        r.mass_c,
        r.sup_m,
        r.sup_c,
        r.grad_c_l2sq,
        r.u_l2sq,
        r.n_lp,
        r.entropy_n,
        r.energy,
        r.div_u_max,
    ];
    head.iter().chain(l.as_array().iter()).map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Parses a diagnostics CSV back into rows of numbers, checking the header.
pub fn read_csv(text: &str) -> Result<Vec<[f64; 21]>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == csv_header() => {}
        _ => return Err("missing or unexpected diagnostics header".into()),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2)))
                .collect::<Result<_, _>>()?;
            vals.try_into().map_err(|_| format!("line {}: wrong column count", i + 2))
        })
        .collect()
}

pub fn snapshot_file_name(index: usize) -> String {
    format!("snapshot_{index:05}.ksns")
}

/// Writes `diagnostics.csv` and numbered snapshot files into one directory.
pub struct DirSink {
    dir: PathBuf,
    csv: BufWriter<File>,
    snapshots: usize,
}

impl DirSink {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join(DIAGNOSTICS_FILE))?);
        writeln!(csv, "{}", csv_header())?;
        Ok(DirSink { dir: dir.to_path_buf(), csv, snapshots: 0 })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshots_written(&self) -> usize {
        self.snapshots
    }

    pub fn finish(mut self) -> io::Result<usize> {
        self.csv.flush()?;
        Ok(self.snapshots)
    }
}

impl OutputSink for DirSink {
    fn record(&mut self, record: &DiagnosticsRecord, ledger: &DissipationLedger) -> io::Result<()> {
        writeln!(self.csv, "{}", csv_row(record, ledger))
    }

    fn snapshot(&mut self, index: usize, state: &SimState) -> io::Result<()> {
        fs::write(self.dir.join(snapshot_file_name(index)), encode_snapshot(state))?;
        self.snapshots += 1;
        Ok(())
    }
}

/// Snapshot paths of a run directory in index order.
pub fn list_snapshots(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ksns"))
        .collect();
    v.sort();
    Ok(v)
}

/// Loads every snapshot of a run directory.
pub fn load_snapshots(dir: &Path) -> Result<Vec<SimState>, SnapshotError> {
    list_snapshots(dir)?.iter().map(|p| crate::io::snapshot::read_snapshot(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_have_matching_width() {
        let r = DiagnosticsRecord { t: 0.5, dt: 1e-3, energy: -2.25, ..Default::default() };
        let row = csv_row(&r, &DissipationLedger::default());
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
        let parsed = read_csv(&format!("{}\n{row}\n", csv_header())).unwrap();
        assert_eq!(parsed[0][0], 0.5);
        assert_eq!(parsed[0][1], 1e-3);
        assert_eq!(parsed[0][11], -2.25);
    }
}
