//! Checkpoints are directories holding `manifest.json` (architecture,
//! tensor names and shapes, seed) and `params.bin` (little-endian f64).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ArchConfig, PolicyError, PolicyParams, TensorSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "nsplan-policy";
const DTYPE: &str = "f64-le";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub seed: u64,
    pub arch: ArchConfig,
    pub parameter_count: usize,
    pub tensors: Vec<TensorSpec>,
    /// Rollout length the parameters were trained for.
    #[serde(default)]
    pub n_segments: Option<usize>,
}

pub fn save_checkpoint(dir: &Path, params: &PolicyParams, n_segments: Option<usize>) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        dtype: DTYPE.into(),
        seed: params.seed,
        arch: params.arch.clone(),
        parameter_count: params.len(),
        tensors: params.tensors().to_vec(),
        n_segments,
    };
    let mut blob = Vec::with_capacity(8 * params.len());
    for v in &params.values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(PARAMS_FILE), blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(PolicyParams, Manifest), CheckpointError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.dtype != DTYPE {
        return Err(CheckpointError::Inconsistent(format!(
            "unsupported format {} / {}",
            manifest.format, manifest.dtype
        )));
    }
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    if blob.len() != 8 * manifest.parameter_count {
        return Err(CheckpointError::Inconsistent(format!(
            "{} bytes for {} parameters",
            blob.len(),
            manifest.parameter_count
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = PolicyParams::from_values(&manifest.arch, manifest.seed, values)?;
    if params.tensors() != manifest.tensors.as_slice() {
        return Err(CheckpointError::Inconsistent("tensor table does not match the architecture".into()));
    }
    Ok((params, manifest))
}
