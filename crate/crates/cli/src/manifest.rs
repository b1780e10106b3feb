//! Run manifest: written before a command starts and marked complete after
//! its last artifact, so an interrupted run is recognizable.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Full argument list the process was started with.
    pub args: Vec<String>,
    /// Resolved configuration as TOML.
    pub config: String,
    pub seed: u64,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
    pub complete: bool,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Identifier unique within an output root: command, seed, start time in
/// nanoseconds and process id.
pub fn new_run_id(command: &str, seed: u64) -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    format!("{command}-s{seed}-{nanos}-{}", std::process::id())
}

/// An open run directory.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    /// Creates `dir` and writes an incomplete manifest into it.
    pub fn start(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                started: now(),
                finished: None,
                complete: false,
                artifacts: Vec::new(),
                ..manifest
            },
        };
        run.save()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `name` in the run directory and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished = Some(now());
        self.manifest.complete = true;
        self.save()?;
        Ok(self.manifest)
    }

    fn save(&self) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Runtime(format!("cannot encode manifest: {e}")))?;
        let p = self.path(MANIFEST_FILE);
        std::fs::write(&p, json).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("bad manifest {}: {e}", p.display())))
}
