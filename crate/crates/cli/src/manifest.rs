//! Output directories and the run manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const OUT_ENV: &str = "GOALCTL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

/// Resolves the output directory: an explicit `--out`, then the config's
/// `output` key, then `$GOALCTL_OUT/<command>-<first 12 hash digits>` with
/// `runs` as the default root.
pub fn resolve_out(command: &str, flag: Option<&Path>, from_config: Option<&str>, hash: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = from_config {
        return PathBuf::from(p);
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{command}-{}", &hash[..12.min(hash.len())]))
}

/// Single writer for one run's output directory; records every file.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeSet<String>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", root.display())))?;
        Ok(Self {
            root,
            files: BTreeSet::new(),
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, creating parent directories and recording
    /// the file as an artifact.
    pub fn claim(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.insert(rel.replace('\\', "/"));
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.claim(rel)?;
        std::fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
    }

    /// Writes through a closure into an in-memory buffer.
    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn finish(self, command: &str, hash: &str, seeds: &[u64]) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash.to_string(),
            seeds: seeds.to_vec(),
            artifacts: self.files.iter().cloned().collect(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
