use std::path::{Path, PathBuf};

use forge_core::{ForgeError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const VERSION: &str = match option_env!("FORGE_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub params: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

/// Files under `path` (or `path` itself), sorted, skipping manifests.
pub fn list_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|e| ForgeError::io(path, e))?;
    for entry in entries {
        let p = entry.map_err(|e| ForgeError::io(path, e))?.path();
        if p.is_dir() {
            out.extend(list_files(&p)?);
        } else if !p.file_name().is_some_and(|n| n.to_string_lossy().ends_with("manifest.json")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Run record: effective config, its hash, seed and digests of every input
/// and output file.
pub struct Recorder {
    command: String,
    params: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, params: serde_json::Value) -> Self {
        Recorder {
            command: command.to_string(),
            params,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(self, config: &RunConfig, path: &Path) -> Result<()> {
        let config_json = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&config_json)?;
        let mut inputs = Vec::new();
        for p in &self.inputs {
            for f in list_files(p)? {
                inputs.push(digest_file(&f)?);
            }
        }
        let outputs = self.outputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?;
        let m = Manifest {
            tool: "forge",
            version: VERSION,
            command: self.command,
            seed: config.seed,
            config_sha256: sha256_hex(&canonical),
            config: config_json,
            params: self.params,
            inputs,
            outputs,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(path, text).map_err(|e| ForgeError::io(path, e))
    }
}
