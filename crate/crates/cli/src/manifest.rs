//! Run manifests: the resolved configuration of a command plus content
//! hashes of what it read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to `output_root` → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub output_root: PathBuf,
    pub dataset_hash: Option<String>,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| CliError::io(path, e))
    }

    /// Outputs whose current content differs from the recorded hash,
    /// including missing files.
    pub fn changed_outputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for (rel, expected) in &self.outputs {
            let path = self.output_root.join(rel);
            if !path.exists() || &hash_file(&path)? != expected {
                changed.push(rel.clone());
            }
        }
        Ok(changed)
    }
}

pub fn version() -> String {
    format!("patchfusion {}", env!("CARGO_PKG_VERSION"))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Collects inputs and outputs while a command runs.
pub struct RunRecord {
    started: Instant,
    started_unix_s: u64,
    root: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    pub dataset_hash: Option<String>,
}

impl RunRecord {
    /// Starts a run whose outputs live under `root`.
    pub fn start(root: &Path) -> Self {
        Self {
            started: Instant::now(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            dataset_hash: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.outputs.insert(rel.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Writes the manifest to `root/file_name` and returns it.
    pub fn finish(self, command: &str, config: &impl Serialize, file_name: &str) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: version(),
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
            output_root: self.root.clone(),
            dataset_hash: self.dataset_hash,
            started_unix_s: self.started_unix_s,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        manifest.save(&self.root.join(file_name))?;
        Ok(manifest)
    }
}
