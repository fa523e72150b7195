//! Output directory helpers: every run writes `manifest.toml`, a fully
//! resolved config that reproduces the run when passed back as `--config`,
//! and `run.json` with the run summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::ExperimentConfig;

pub const MANIFEST: &str = "manifest.toml";
pub const SUMMARY: &str = "run.json";

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates `name` (which may contain a subdirectory), hands a buffered
    /// writer to `fill`, and records the file for the summary.
    pub fn write<F>(&mut self, name: &str, fill: F) -> anyhow::Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    pub fn write_manifest(&mut self, command: &str, cfg: &ExperimentConfig) -> anyhow::Result<()> {
        let body = toml::to_string(cfg).context("serializing manifest")?;
        self.write(MANIFEST, |w| {
            writeln!(w, "# fedloc {} {command}", env!("CARGO_PKG_VERSION"))?;
            w.write_all(body.as_bytes())?;
            Ok(())
        })?;
        Ok(())
    }

    /// `run.json`: `{version, command, seed, files, ...details}`.
    pub fn write_summary<T: Serialize>(&mut self, command: &str, seed: u64, details: &T) -> anyhow::Result<()> {
        let mut value = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
        });
        let mut files = self.written.clone();
        files.push(SUMMARY.to_string());
        value["files"] = serde_json::to_value(files)?;
        if let serde_json::Value::Object(extra) = serde_json::to_value(details)? {
            value.as_object_mut().expect("object").extend(extra);
        }
        self.write(SUMMARY, |w| {
            serde_json::to_writer_pretty(&mut *w, &value)?;
            writeln!(w)?;
            Ok(())
        })?;
        Ok(())
    }
}
