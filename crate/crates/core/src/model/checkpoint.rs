//! Single-file checkpoint archive.
//!
//! Layout: 8-byte magic `ESSGANCK`, `u32` format version, `u64` header
//! length, UTF-8 JSON header, then every tensor as little-endian `f32` in
//! header order. All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SgConfig;
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"ESSGANCK";
pub const FORMAT_VERSION: u32 = 1;

/// Names starting with this prefix hold optimizer state rather than weights.
pub const OPTIMIZER_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SgConfig,
    /// Free-form training state (counters, best score, RNG positions).
    pub state: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: SgConfig,
    state: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            state: self.state.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.values().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(format!("malformed header: {e}")))?;
        let mut pos = hend;
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let len = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| bad(format!("{}: invalid shape {:?}", e.name, e.shape)))?;
            let end = len
                .checked_mul(4)
                .and_then(|b| b.checked_add(pos))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| bad(format!("{}: truncated tensor data", e.name)))?;
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            pos = end;
            let t = Tensor::new(&e.shape, data)?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(bad(format!("duplicate tensor {}", e.name)));
            }
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        header
            .config
            .validate()
            .map_err(|e| bad(format!("stored config: {e}")))?;
        Ok(Self {
            config: header.config,
            state: header.state,
            tensors,
        })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
