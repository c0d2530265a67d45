//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::Outcome;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    /// Floats use 17 significant digits, which round-trips every `f64`.
    pub fn render(&self) -> String {
        match self {
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// A named table. The empty name is the main table of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table '{}'", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// `{prefix}.csv` for the main table, `{prefix}_{name}.csv` otherwise.
    pub fn path(&self, prefix: &str) -> PathBuf {
        if self.name.is_empty() {
            PathBuf::from(format!("{prefix}.csv"))
        } else {
            PathBuf::from(format!("{prefix}_{}.csv", self.name))
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    config: Option<String>,
    created: String,
    hamflow_version: &'a str,
    files: Vec<String>,
    numeric: &'a crate::config::Numeric,
    params: &'a toml::Table,
    metrics: &'a BTreeMap<String, f64>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write every table plus `{prefix}.manifest.json`. Returns the paths written.
pub fn write_run(prefix: &str, cfg: &ExperimentConfig, config_path: Option<&Path>, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    let manifest_path = PathBuf::from(format!("{prefix}.manifest.json"));
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut files = Vec::new();
    for table in &outcome.tables {
        let path = table.path(prefix);
        write(&path, &table.to_csv())?;
        files.push(path);
    }
    let manifest = Manifest {
        experiment: &cfg.experiment,
        seed: cfg.context().seed(),
        config: config_path.map(|p| p.display().to_string()),
        created: chrono::Utc::now().to_rfc3339(),
        hamflow_version: env!("CARGO_PKG_VERSION"),
        files: files.iter().map(|p| p.display().to_string()).collect(),
        numeric: &cfg.numeric,
        params: &cfg.params,
        metrics: &outcome.metrics,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&manifest_path, json.as_bytes())?;
    files.push(manifest_path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(Cell::Float(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::Float(-2.0).render(), "-2.0000000000000000e0");
        assert_eq!(Cell::Float(f64::NAN).render(), "nan");
        let x = 1.0 / 3.0;
        assert_eq!(Cell::Float(x).render().parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_has_header_and_quotes_text() {
        let mut t = Table::new("", &["name", "value"]);
        t.push(vec!["a,b".into(), 1usize.into()]);
        assert_eq!(String::from_utf8(t.to_csv()).unwrap(), "name,value\n\"a,b\",1\n");
        assert_eq!(t.path("out/x"), PathBuf::from("out/x.csv"));
        assert_eq!(Table::new("extra", &["a"]).path("out/x"), PathBuf::from("out/x_extra.csv"));
    }
}
