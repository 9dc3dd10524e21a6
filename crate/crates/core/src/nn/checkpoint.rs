//! Checkpoint directory: `manifest.json` plus `params.f64` (little-endian).

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSpec, ParamStore};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.f64";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub vocab_hash: String,
    /// Free-form architecture and vocabulary description.
    pub architecture: serde_json::Value,
    pub total_params: usize,
    pub params: Vec<ParamSpec>,
}

pub fn save(
    dir: &Path,
    store: &ParamStore,
    vocab_hash: &str,
    architecture: serde_json::Value,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        vocab_hash: vocab_hash.to_string(),
        architecture,
        total_params: store.len(),
        params: store.specs().to_vec(),
    };
    let mut bytes = Vec::with_capacity(store.len() * 8);
    for v in store.flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Mismatch(format!(
            "format version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Loads values into `store`, whose layout must equal the manifest's.
pub fn load_into(dir: &Path, manifest: &Manifest, store: &mut ParamStore) -> Result<(), CheckpointError> {
    if manifest.params != store.specs() {
        return Err(CheckpointError::Mismatch(
            "parameter layout differs from the model".into(),
        ));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if bytes.len() != manifest.total_params * 8 {
        return Err(CheckpointError::Mismatch(format!(
            "{} has {} bytes, expected {}",
            PARAMS_FILE,
            bytes.len(),
            manifest.total_params * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    store.load_flat(values).map_err(CheckpointError::Mismatch)
}
