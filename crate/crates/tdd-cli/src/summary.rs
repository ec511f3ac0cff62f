//! Flat key=value run summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const SUMMARY_FILE: &str = "summary.txt";

/// Sorted key=value pairs; floats are written in `{:e}` form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary(BTreeMap<String, String>);

impl Summary {
    pub fn new() -> Self {
        Summary::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, format!("{value:e}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Summary {
        Summary(
            text.lines()
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        )
    }
}

/// Write `summary.txt` next to the run's CSV artifacts.
pub fn export_summary(dir: &Path, summary: &Summary) -> Result<PathBuf, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut has_csv = false;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().extension().is_some_and(|x| x == "csv") {
            has_csv = true;
            break;
        }
    }
    if !has_csv {
        return Err(CliError::NoArtifacts(dir.to_path_buf()));
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary.render()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
