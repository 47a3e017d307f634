//! Run directory: byte-identical config copy, tables, summary and manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

/// A CSV table with every cell already rendered.
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: Vec<&'static str>) -> Self {
        Self { name: name.to_string(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Everything a subcommand produces; written by one writer after the run.
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
    /// Extra binary files (relative path, contents).
    pub blobs: Vec<(String, Vec<u8>)>,
    pub check: Option<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
    started: String,
    finished: String,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    check: Option<&'a Check>,
}

pub struct RunInfo<'a> {
    pub experiment: &'a str,
    pub config_hash: &'a str,
    pub config_bytes: &'a [u8],
    pub seed: u64,
    pub started: DateTime<Utc>,
    pub formats: &'a [String],
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

/// Writes all artifacts and, last, the manifest. Returns the manifest path.
pub fn write_run(dir: &Path, info: &RunInfo, art: &Artifacts) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let mut put = |rel: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        files.push(rel.to_string());
        Ok(())
    };
    put("config.json", info.config_bytes)?;
    let wants = |f: &str| info.formats.iter().any(|x| x == f);
    if wants("csv") {
        for t in &art.tables {
            put(&format!("{}.csv", t.name), &t.to_bytes()?)?;
        }
    }
    if wants("json") {
        let mut s = serde_json::to_vec_pretty(&art.summary)?;
        s.push(b'\n');
        put("summary.json", &s)?;
    }
    for (rel, bytes) in &art.blobs {
        put(rel, bytes)?;
    }
    let manifest = Manifest {
        experiment: info.experiment,
        config_hash: info.config_hash,
        seed: info.seed,
        version: env!("CARGO_PKG_VERSION"),
        started: info.started.to_rfc3339_opts(SecondsFormat::Millis, true),
        finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        files,
        check: art.check.as_ref(),
    };
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}
