//! Checkpoints: little-endian `f64` parameter blob plus a JSON description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelError, ModelSpec, TrainConfig};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub seed: u64,
    pub config: TrainConfig,
    pub dev_accuracy_history: Vec<f64>,
    pub best_epoch: usize,
    pub config_hash: String,
    pub num_parameters: usize,
    pub blob_sha256: String,
}

/// JSON description stored next to the blob.
pub fn meta_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the blob and its JSON; `meta.num_parameters` and `meta.blob_sha256`
/// are filled in here.
pub fn save_checkpoint(model: &Model, mut meta: CheckpointMeta, blob: &Path) -> Result<CheckpointMeta, ModelError> {
    let bytes: Vec<u8> = model.params().to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    meta.spec = model.spec().clone();
    meta.num_parameters = bytes.len() / 8;
    meta.blob_sha256 = sha256_hex(&bytes);
    std::fs::write(blob, &bytes).map_err(io(blob))?;
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let mp = meta_path(blob);
    std::fs::write(&mp, json).map_err(io(&mp))?;
    Ok(meta)
}

pub fn load_checkpoint(blob: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let mp = meta_path(blob);
    let text = std::fs::read_to_string(&mp).map_err(io(&mp))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ModelError::Format(format!("{}: {e}", mp.display())))?;
    let bytes = std::fs::read(blob).map_err(io(blob))?;
    if bytes.len() % 8 != 0 || bytes.len() / 8 != meta.num_parameters {
        return Err(ModelError::Format(format!(
            "{} holds {} bytes, expected {} parameters",
            blob.display(),
            bytes.len(),
            meta.num_parameters
        )));
    }
    if sha256_hex(&bytes) != meta.blob_sha256 {
        return Err(ModelError::Format(format!("{} does not match its recorded digest", blob.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = Model::zeros(meta.spec.clone())?.params().clone();
    params.set_flat(&values)?;
    let model = Model::from_params(meta.spec.clone(), params)?;
    Ok((model, meta))
}
