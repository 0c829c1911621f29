//! Buffered outputs: every file of a run is produced in memory first and
//! written only once the whole computation succeeded, followed by the
//! manifest describing the run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub const MANIFEST: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Structured description of a run. Tables are ordered by key, and no
/// wall-clock data is recorded, so identical runs give identical files.
pub struct Manifest {
    root: Table,
    settings: Table,
    results: Table,
    warnings: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_path: &Path, config_text: &str) -> Self {
        let mut root = Table::new();
        root.insert("command".into(), command.into());
        root.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
        root.insert("config_path".into(), config_path.display().to_string().into());
        root.insert("config_sha256".into(), sha256_hex(config_text.as_bytes()).into());
        Self { root, settings: Table::new(), results: Table::new(), warnings: Vec::new() }
    }

    /// Effective setting, including defaulted ones.
    pub fn setting(&mut self, key: &str, value: impl Into<Value>) {
        self.settings.insert(key.into(), value.into());
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.into(), value.into());
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn render(mut self, outputs: &[String]) -> String {
        self.root.insert("outputs".into(), outputs.to_vec().into());
        if !self.warnings.is_empty() {
            self.root.insert("warnings".into(), self.warnings.into());
        }
        self.root.insert("settings".into(), self.settings.into());
        self.root.insert("results".into(), self.results.into());
        toml::to_string(&self.root).expect("manifest serializes")
    }
}

pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Serializes `rows` as CSV with a header taken from the field names.
    pub fn add_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        self.add(name, w.into_inner().context("flushing csv")?);
        Ok(())
    }

    /// CSV from a header and preformatted records.
    pub fn add_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        self.add(name, w.into_inner().context("flushing csv")?);
        Ok(())
    }

    pub fn commit(self, manifest: Manifest) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let names: Vec<String> = self.files.iter().map(|f| f.0.clone()).collect();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        let path = self.dir.join(MANIFEST);
        fs::write(&path, manifest.render(&names)).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} files and {MANIFEST} to {}", names.len(), self.dir.display());
        Ok(())
    }
}
