use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use super::BUILD_ID;
use crate::error::HarnessError;
use crate::layers::{ModelConfig, ParamEntry, ParamStore};

const MAGIC: &[u8; 8] = b"MESHNET\x01";
const HEADER: usize = 8 + 32 + 8;

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_hash: String,
    pub parameter_count: usize,
    pub model: ModelConfig,
    pub entries: Vec<ParamEntry>,
    pub build_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_hash: [u8; 32],
    pub values: Vec<f64>,
}

pub fn model_hash(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")).into()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the binary record and its `.json` sidecar.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, store: &ParamStore, seed: u64) -> Result<(), HarnessError> {
    let hash = model_hash(cfg);
    let mut buf = Vec::with_capacity(HEADER + 8 * store.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&hash);
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for v in store.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(io_err(path))?;
    let meta = CheckpointMeta {
        model_hash: hex(&hash),
        parameter_count: store.len(),
        model: cfg.clone(),
        entries: store.entries().to_vec(),
        build_id: BUILD_ID.to_string(),
        seed,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(io_err(&side))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let buf = std::fs::read(path).map_err(io_err(path))?;
    let bad = |m: &str| HarnessError::Checkpoint(format!("{}: {m}", path.display()));
    if buf.len() < HEADER || &buf[..8] != MAGIC {
        return Err(bad("not a parameter file"));
    }
    let model_hash: [u8; 32] = buf[8..40].try_into().unwrap();
    let count = u64::from_le_bytes(buf[40..48].try_into().unwrap()) as usize;
    let body = &buf[HEADER..];
    if body.len() != count.checked_mul(8).ok_or_else(|| bad("corrupt count"))? {
        return Err(bad(&format!("expected {count} values, file holds {} bytes", body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Checkpoint { model_hash, values })
}

impl Checkpoint {
    /// Copies the values into a store built from `cfg`, after checking that
    /// the checkpoint was written for the same model configuration.
    pub fn restore(&self, cfg: &ModelConfig, store: &mut ParamStore) -> Result<(), HarnessError> {
        if self.model_hash != model_hash(cfg) {
            return Err(HarnessError::Checkpoint(format!(
                "model configuration hash {} does not match checkpoint {}",
                hex(&model_hash(cfg)),
                hex(&self.model_hash)
            )));
        }
        if self.values.len() != store.len() {
            return Err(HarnessError::Checkpoint(format!(
                "checkpoint has {} values, model has {}",
                self.values.len(),
                store.len()
            )));
        }
        store.data_mut().copy_from_slice(&self.values);
        Ok(())
    }
}
