//! Per-run record of configuration, input digests and produced artifacts.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trafficctx::experiment::ExperimentConfig;
use trafficctx::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Records the digest of a file, or of every file below a directory in
    /// sorted order.
    pub fn add_input(&mut self, path: &Path) -> Result<(), Error> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| io_error(path, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| io_error(path, err)))
                .collect::<Result<_, _>>()?;
            entries.sort();
            for p in entries {
                self.add_input(&p)?;
            }
            return Ok(());
        }
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn add_artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn file_sha256(path: &Path) -> Result<String, Error> {
    let mut file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_error(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
