//! Deterministic file output. Floats are written with their shortest
//! round-trip representation, JSON maps are key-sorted and nothing depends
//! on wall-clock time, so identical runs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use bsdelab_core::{AdaptedProcess, PathEnsemble};

use crate::config::Config;

/// One asserted invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Square table with row and column labels.
pub fn matrix_table(labels: &[String], values: &[f64]) -> Table {
    let l = labels.len();
    let mut header = vec!["n".to_string()];
    header.extend(labels.iter().cloned());
    let mut t = Table::new(&header);
    for (i, lab) in labels.iter().enumerate() {
        let mut row = vec![lab.clone()];
        row.extend(values[i * l..(i + 1) * l].iter().map(|&v| num(v)));
        t.row(row);
    }
    t
}

/// Long-format dump of the first `max_paths` paths: one row per
/// `(path, index)` with the time and every component.
pub fn process_table(x: &AdaptedProcess, max_paths: usize, prefix: &str) -> Table {
    let w = x.width();
    let mut header = vec!["path".to_string(), "index".to_string(), "t".to_string()];
    header.extend((0..w).map(|k| format!("{prefix}{k}")));
    let mut t = Table::new(&header);
    for p in 0..x.paths().min(max_paths) {
        for j in 0..x.times() {
            let mut row = vec![p.to_string(), j.to_string(), num(x.grid().time(j))];
            row.extend(x.at(p, j).iter().map(|&v| num(v)));
            t.row(row);
        }
    }
    t
}

pub fn ensemble_table(ens: &PathEnsemble, max_paths: usize) -> Table {
    let m = ens.dims();
    let mut header = vec!["path".to_string(), "index".to_string(), "t".to_string()];
    header.extend((0..m).map(|k| format!("b{k}")));
    let mut t = Table::new(&header);
    for p in 0..ens.count().min(max_paths) {
        for j in 0..ens.grid().len() {
            let mut row = vec![p.to_string(), j.to_string(), num(ens.grid().time(j))];
            row.extend(ens.value(p, j).iter().map(|&v| num(v)));
            t.row(row);
        }
    }
    t
}

/// Collects the files of one run under a single directory.
pub struct Export {
    dir: PathBuf,
    files: Vec<String>,
}

impl Export {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Export {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn path_for(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.path_for(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path_for(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    pub fn checks(&mut self, checks: &[Check]) -> Result<()> {
        let mut t = Table::new(&["check", "passed", "detail"]);
        for c in checks {
            t.row(vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        }
        self.csv("checks.csv", &t)
    }

    /// `config.toml` echo plus `summary.json` holding the config, seed,
    /// checks and the command's results. Written last.
    pub fn finish(&mut self, command: &str, cfg: &Config, checks: &[Check], results: Value) -> Result<()> {
        self.text("config.toml", &cfg.to_toml()?)?;
        self.checks(checks)?;
        let mut files = self.files.clone();
        files.push("summary.json".into());
        let summary = json!({
            "command": command,
            "seed": cfg.seed,
            "config": cfg,
            "passed": checks.iter().all(|c| c.passed),
            "checks": checks,
            "results": results,
            "files": files,
            "note": "bounds are checked on Monte Carlo and time-discretized approximations; \
                     every tolerance includes the declared sampling and discretization slack",
        });
        self.json("summary.json", &summary)
    }
}
