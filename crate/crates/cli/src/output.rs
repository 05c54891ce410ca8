//! CSV and JSON writers.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use cpd_core::harness::{ConvergenceStudy, DriftCell};
use cpd_core::invariants::DriftSeries;
use serde::Serialize;

pub const DRIFT_HEADER: &str = "t,e_H,e_Hh,e_M,e_I";

/// 17 significant digits, so every binary64 value round-trips.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// File-name friendly rendering of ε.
pub fn eps_tag(eps: f64) -> String {
    format!("eps{eps}")
}

pub fn write_drift_csv(path: &Path, series: &DriftSeries) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{DRIFT_HEADER}")?;
    for i in 0..series.len() {
        let row = series.row(i).map(float);
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

pub fn drift_csv_path(dir: &Path, problem: &str, cell: &DriftCell) -> PathBuf {
    dir.join(format!("{problem}_{}_{}.csv", cell.method, eps_tag(cell.epsilon)))
}

pub fn write_convergence_csv(path: &Path, study: &ConvergenceStudy) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let names: Vec<&str> = study.methods.iter().map(|m| m.as_str()).collect();
    writeln!(w, "k,h,{}", names.join(","))?;
    for row in &study.rows {
        let errs: Vec<String> = row
            .errors
            .iter()
            .map(|e| e.map_or_else(|| "nan".to_string(), float))
            .collect();
        writeln!(w, "{},{},{}", row.k, float(row.h), errs.join(","))?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.0, 0.1, 1.0 / 3.0, 2.5e-300, f64::MAX, 4.573e-6] {
            let s = float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let digits = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
    }

    #[test]
    fn eps_tags() {
        assert_eq!(eps_tag(1.0), "eps1");
        assert_eq!(eps_tag(0.125), "eps0.125");
    }
}
