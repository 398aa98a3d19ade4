//! In-memory run outputs, CSV formatting and atomic directory writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Shortest format that round-trips every `f64`: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Default, Clone)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut c = Csv { text: String::new() };
        c.row_str(header.iter().map(|s| s.to_string()));
        c
    }

    pub fn row_str(&mut self, cells: impl IntoIterator<Item = String>) {
        let line: Vec<String> = cells.into_iter().map(|c| csv_field(&c)).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn row(&mut self, cells: &[f64]) {
        self.row_str(cells.iter().map(|&x| fmt_f64(x)));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The run completed but at least one statistical check failed.
    ChecksFailed,
}

/// Everything a command produces, keyed by file name.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: String,
    pub warnings: Vec<String>,
    pub status: Status,
}

impl Outputs {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.file(name).and_then(|b| std::str::from_utf8(b).ok())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tmp_sibling(dir: &Path) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    dir.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes `files` into `dir` through a temporary sibling directory and a rename, so
/// either every file is present or none is.
///
/// An existing `dir` is replaced only if it is empty or holds a previous run
/// (a `manifest.json`).
pub fn write_atomic(dir: &Path, files: &BTreeMap<String, Vec<u8>>) -> Result<(), CliError> {
    if dir.exists() {
        let empty = fs::read_dir(dir)?.next().is_none();
        if !empty && !dir.join("manifest.json").exists() {
            return Err(CliError::Config(format!(
                "output directory {} exists and does not hold a previous run",
                dir.display()
            )));
        }
    }
    if let Some(parent) = dir.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = tmp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    let result = (|| -> Result<(), CliError> {
        fs::create_dir(&tmp)?;
        for (name, bytes) in files {
            fs::write(tmp.join(name), bytes)?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    })();
    if result.is_err() && tmp.exists() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}
