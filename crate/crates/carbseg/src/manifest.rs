//! Run manifests: what a command was run with, written atomically.
//!
//! The file is sectioned `key=value` text. Its `[config]` section holds the
//! fully resolved configuration, so the manifest itself is a valid
//! `--config` file for re-running the command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: Vec::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::from("[run]\n");
        s.push_str(&format!("command={}\n", self.command));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed={seed}\n"));
        }
        s.push_str(&format!("version={}\n", self.version));
        s.push_str(&format!("started_unix={}\nfinished_unix={}\n", self.started_unix, self.finished_unix));
        s.push_str("[inputs]\n");
        for (k, p) in &self.inputs {
            s.push_str(&format!("{k}={}\n", p.display()));
        }
        s.push_str("[outputs]\n");
        for p in &self.outputs {
            s.push_str(&format!("{}\n", p.display()));
        }
        s.push_str("[config]\n");
        for (k, v) in &self.config {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    /// Stamps the finish time and writes `manifest.txt` in `dir` through a
    /// temporary file and a rename.
    pub fn finish(mut self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        self.finished_unix = unix_now();
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, self.render()).at(&tmp)?;
        fs::rename(&tmp, &path).at(&path)?;
        Ok(path)
    }
}
