//! Prediction and truth tables, output paths and run manifests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use devid_core::MacAddr;
use serde::Serialize;
use serde_json::{Map, Value};

pub const METHODS: [&str; 3] = ["individual", "aggregated", "mixed"];

/// Aggregation key: the source MAC, or the row itself for frames without one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Mac(MacAddr),
    Solo(usize),
}

impl GroupKey {
    pub fn of(mac: Option<MacAddr>, row: usize) -> Self {
        mac.map_or(GroupKey::Solo(row), GroupKey::Mac)
    }
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub capture_id: String,
    pub index: usize,
    pub mac: Option<MacAddr>,
    pub individual: String,
    pub confidence: f64,
    pub aggregated: String,
    pub mixed: String,
    pub predicted: String,
}

pub const PREDICTION_HEADER: [&str; 8] = ["capture_id", "index", "mac", "individual", "confidence", "aggregated", "mixed", "predicted"];

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(PREDICTION_HEADER)?;
    for r in rows {
        let mac = r.mac.map(|m| m.to_string()).unwrap_or_default();
        let index = r.index.to_string();
        let confidence = format!("{:.6}", r.confidence);
        w.write_record([&r.capture_id, &index, &mac, &r.individual, &confidence, &r.aggregated, &r.mixed, &r.predicted])?;
    }
    w.flush()?;
    Ok(())
}

/// A CSV read as named string columns.
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Table { path: path.to_path_buf(), header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        match self.column(name) {
            Some(i) => Ok(i),
            None => bail!("{} has no {name:?} column", self.path.display()),
        }
    }

    /// `(capture_id, index)` of every row.
    pub fn keys(&self) -> Result<Vec<(String, usize)>> {
        let (c, i) = (self.require("capture_id")?, self.require("index")?);
        self.rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let index = row[i].parse().with_context(|| format!("{} row {}: bad index {:?}", self.path.display(), n + 1, row[i]))?;
                Ok((row[c].clone(), index))
            })
            .collect()
    }

    pub fn macs(&self) -> Result<Vec<Option<MacAddr>>> {
        let m = self.require("mac")?;
        self.rows
            .iter()
            .map(|r| if r[m].is_empty() { Ok(None) } else { r[m].parse().map(Some).map_err(|e| anyhow::anyhow!("{e}")) })
            .collect()
    }
}

/// Truth labels keyed by `(capture_id, index)`; rows with an empty label
/// are left out.
pub fn truth_index(table: &Table) -> Result<HashMap<(String, usize), String>> {
    let l = table.require("label")?;
    Ok(table.keys()?.into_iter().zip(&table.rows).filter(|(_, r)| !r[l].is_empty()).map(|(k, r)| (k, r[l].clone())).collect())
}

/// Joins predictions to truth; rows without a truth label are dropped.
/// Returns row indices into `pred` and the matching truth labels.
pub fn join(truth: &HashMap<(String, usize), String>, pred: &Table) -> Result<(Vec<usize>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, k) in pred.keys()?.into_iter().enumerate() {
        if let Some(l) = truth.get(&k) {
            rows.push(i);
            labels.push(l.clone());
        }
    }
    if rows.is_empty() {
        bail!("no prediction row matches a labelled truth row");
    }
    Ok((rows, labels))
}

/// Output location: relative paths go under `out_dir` when one is set.
pub fn resolve(out_dir: Option<&Path>, path: &Path) -> Result<PathBuf> {
    let p = match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    };
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(p)
}

/// `dir/report.csv` with suffix `confusion.csv` becomes `dir/report.confusion.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    catalogue_version: Option<&'a str>,
    inputs: &'a [String],
    outputs: &'a [String],
    wall_time_s: f64,
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

/// Inputs, outputs, seed and timings of one command, written next to its
/// primary output as `<output>.manifest.json`.
pub struct Manifest {
    command: &'static str,
    seed: u64,
    started: Instant,
    pub catalogue_version: Option<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Manifest {
            command,
            seed,
            started: Instant::now(),
            catalogue_version: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(key.to_string(), serde_json::to_value(value).expect("serialisable"));
    }

    pub fn write(mut self, primary: &Path) -> Result<()> {
        let path = primary.with_file_name(format!("{}.manifest.json", primary.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()));
        self.output(primary);
        self.outputs.dedup();
        let file = ManifestFile {
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            catalogue_version: self.catalogue_version.as_deref(),
            inputs: &self.inputs,
            outputs: &self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            extra: &self.extra,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/report.csv"), "confusion.csv"), PathBuf::from("out/report.confusion.csv"));
        assert_eq!(sibling(Path::new("mask"), "votes.csv"), PathBuf::from("mask.votes.csv"));
    }

    #[test]
    fn solo_keys_never_collide_with_macs() {
        let mac: MacAddr = "00:17:88:24:76:ff".parse().unwrap();
        assert_ne!(GroupKey::of(Some(mac), 0), GroupKey::of(None, 0));
        assert_ne!(GroupKey::of(None, 1), GroupKey::of(None, 2));
    }
}
