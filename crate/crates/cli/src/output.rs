//! Report and table writers. JSON objects are emitted with sorted keys and
//! every table starts with a `#` comment line naming the version and seed,
//! so reruns with the same inputs produce identical bytes.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use speechground::VERSION_TAG;

pub struct OutputDir(PathBuf);

impl OutputDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)
            .map_err(|e| speechground::Error::Io { path: path.to_path_buf(), source: e })
            .context("creating output directory")?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let value = serde_json::to_value(value)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write(name, table.render())
    }

    fn write(&self, name: &str, text: String) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| speechground::Error::Io { path: path.clone(), source: e })?;
        Ok(path)
    }
}

/// Tab-separated table with leading `#` comment lines.
pub struct Table {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(seed: u64, header: &[&str]) -> Self {
        Self {
            comments: vec![format!("version={VERSION_TAG} seed={seed}")],
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, text: impl Into<String>) -> &mut Self {
        self.comments.push(text.into());
        self
    }

    pub fn row(&mut self, cells: Vec<String>) -> &mut Self {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.header.join("\t"));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }
}

pub fn cell(v: impl Display) -> String {
    v.to_string()
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}
