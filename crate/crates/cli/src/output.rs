//! Reports and staged output files.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Machine-parseable `key = value` report.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new(command: &str, config: &[(String, String)]) -> Self {
        let mut r = Self::default();
        r.push("command", command);
        for (k, v) in config {
            r.push(format!("config.{k}"), v);
        }
        r
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, lines: Vec<(String, String)>) {
        self.lines.extend(lines);
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Files are only written once the whole command has succeeded; if any write
/// fails, the files already written are removed.
#[derive(Debug)]
pub struct Staged {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Staged {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("cannot create output directory {}", self.dir.display()))?;
        let mut written: Vec<PathBuf> = Vec::new();
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            if let Err(e) = write_atomic(&path, contents) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e).with_context(|| format!("cannot move output into place at {}", path.display()));
    }
    Ok(())
}
