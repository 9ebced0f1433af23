use std::path::{Path, PathBuf};

use essgan::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::{io_fail, CliResult, Fail};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub mask: u64,
    pub noise: Option<u64>,
    pub augment: Option<u64>,
}

impl Seeds {
    pub fn of(cfg: &TrainConfig) -> Self {
        Self {
            init: cfg.init_seed,
            data: cfg.data_seed,
            mask: cfg.mask.seed,
            noise: cfg.noise.map(|n| n.seed),
            augment: cfg.augment.map(|a| a.seed),
        }
    }
}

/// Everything needed to rerun and audit a training run.
///
/// Input paths are absolute; output paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub deterministic: bool,
    pub threads: usize,
    pub config: TrainConfig,
    pub seeds: Seeds,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock fields, omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_secs: Option<f64>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_fail(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digest(path: &Path, recorded_as: PathBuf) -> CliResult<FileDigest> {
    Ok(FileDigest {
        path: recorded_as,
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Fail::Data(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| io_fail(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
        serde_json::from_str(&text).map_err(|e| Fail::Data(format!("{}: {e}", path.display())))
    }

    /// Rehashes every recorded file; returns the number checked.
    pub fn verify(&self, manifest_path: &Path) -> CliResult<usize> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let outputs = self.outputs.iter().map(|d| (base.join(&d.path), d));
        let files: Vec<(PathBuf, &FileDigest)> =
            self.inputs.iter().map(|d| (d.path.clone(), d)).chain(outputs).collect();
        for (path, d) in &files {
            if !path.is_file() {
                return Err(Fail::Data(format!("{} is missing", path.display())));
            }
            if sha256_file(path)? != d.sha256 {
                return Err(Fail::Data(format!(
                    "{} does not match its recorded digest",
                    path.display()
                )));
            }
        }
        Ok(files.len())
    }
}
