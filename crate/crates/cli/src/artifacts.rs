//! Output directories with a manifest recording which configuration wrote
//! each artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use eden::config::RunConfig;
use eden::{EdenError, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub command: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub runs: BTreeMap<String, RunEntry>,
}

pub struct OutputDir {
    dir: PathBuf,
    command: String,
    config: RunConfig,
    hash: String,
    manifest: Manifest,
    written: Vec<String>,
}

impl OutputDir {
    /// Creates `dir` if needed and checks up front that none of `names`
    /// would overwrite output of a different configuration.
    pub fn open(dir: &Path, command: &str, names: &[&str], config: &RunConfig, force: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| EdenError::file(dir, e))?;
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| EdenError::file(&manifest_path, e))?;
            serde_json::from_str(&text)?
        } else {
            Manifest::default()
        };
        let hash = config.hash();
        if !force {
            for name in names {
                let path = dir.join(name);
                match manifest.artifacts.get(*name) {
                    Some(entry) if entry.config_hash != hash => {
                        return Err(EdenError::Config(format!(
                            "{} was written by `{}` under config {}; rerun with --force to replace it",
                            path.display(),
                            entry.command,
                            entry.config_hash
                        )));
                    }
                    None if path.exists() => {
                        return Err(EdenError::Config(format!(
                            "{} exists and is not listed in the manifest; rerun with --force to replace it",
                            path.display()
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: config.clone(),
            hash,
            manifest,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                command: self.command.clone(),
                config_hash: self.hash.clone(),
            },
        );
        self.written.push(name.to_string());
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| EdenError::file(&path, e))?;
        self.record(name);
        Ok(())
    }

    fn stamp(&self, value: Value) -> Value {
        let mut out = Map::new();
        out.insert("config_hash".into(), Value::String(self.hash.clone()));
        match value {
            Value::Object(map) => out.extend(map),
            other => {
                out.insert("data".into(), other);
            }
        }
        Value::Object(out)
    }

    /// Pretty JSON with the config hash as its first field.
    pub fn json(&mut self, name: &str, value: impl Serialize) -> Result<()> {
        let v = self.stamp(serde_json::to_value(value)?);
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// One stamped JSON object per line.
    pub fn json_lines<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(&self.stamp(serde_json::to_value(row)?))?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn dot(&mut self, name: &str, dot: &str) -> Result<()> {
        let text = format!("// config_hash: {}\n{dot}", self.hash);
        self.write(name, text.as_bytes())
    }

    /// The run configuration, ready to pass back through `--config`.
    pub fn toml(&mut self, name: &str, config: &RunConfig) -> Result<()> {
        let text = format!("# config_hash: {}\n{}", self.hash, config.to_toml()?);
        self.write(name, text.as_bytes())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write(name, bytes)
    }

    /// Writes the manifest and returns a summary of the run.
    pub fn finish(mut self) -> Result<Value> {
        self.manifest.runs.insert(
            self.command.clone(),
            RunEntry {
                config_hash: self.hash.clone(),
                seed: self.config.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: self.config.clone(),
                artifacts: self.written.clone(),
            },
        );
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.path(MANIFEST);
        fs::write(&path, text).map_err(|e| EdenError::file(&path, e))?;
        Ok(serde_json::json!({
            "command": self.command,
            "config_hash": self.hash,
            "out": self.dir,
            "artifacts": self.written,
        }))
    }
}
