//! `<study>.csv` and `<study>.summary.json` writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

pub struct Output {
    dir: PathBuf,
    study: String,
}

/// 17 significant digits; empty for a missing value.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Validation(format!("{}: {e}", path.display()))
}

impl Output {
    pub fn new(dir: &Path, study: &str) -> Result<Output, Failure> {
        if study.is_empty() || study.contains(['/', '\\']) {
            return Err(Failure::Validation(format!("study: `{study}` is not a file name")));
        }
        fs::create_dir_all(dir).map_err(io(dir))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            study: study.to_string(),
        })
    }

    pub fn csv_path(&self) -> PathBuf {
        self.dir.join(format!("{}.csv", self.study))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir.join(format!("{}.summary.json", self.study))
    }

    pub fn write_csv(&self, header: &[&str], rows: &[Vec<f64>]) -> Result<(), Failure> {
        let path = self.csv_path();
        let mut w =
            csv::Writer::from_path(&path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| Failure::Validation(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row.iter().map(|&v| format_float(v))).map_err(fail)?;
        }
        w.flush().map_err(io(&path))?;
        Ok(())
    }

    pub fn write_summary(&self, summary: &impl Serialize) -> Result<(), Failure> {
        let path = self.summary_path();
        let mut text =
            serde_json::to_string_pretty(summary).map_err(|e| Failure::Numerical(format!("summary: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(io(&path))
    }
}
