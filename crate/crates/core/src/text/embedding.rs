//! Dense row-major embedding tables and their on-disk format: a flat
//! little-endian `f32` blob plus a JSON sidecar next to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TextError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "embedding data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Values rounded through `f32`, matching what the binary format stores.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| *v as f32 as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub vocab_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn save_embeddings(
    blob: &Path,
    matrix: &EmbeddingMatrix,
    sidecar: &EmbeddingSidecar,
) -> Result<(), TextError> {
    let mut bytes = Vec::with_capacity(matrix.data.len() * 4);
    for v in &matrix.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let io = |source| TextError::Io {
        path: blob.to_path_buf(),
        source,
    };
    std::fs::write(blob, bytes).map_err(io)?;
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(blob), json).map_err(io)
}

pub fn load_embeddings(blob: &Path) -> Result<(EmbeddingMatrix, EmbeddingSidecar), TextError> {
    let io = |source| TextError::Io {
        path: blob.to_path_buf(),
        source,
    };
    let side: EmbeddingSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(blob)).map_err(io)?)
            .map_err(|e| TextError::Format(format!("bad sidecar: {e}")))?;
    let bytes = std::fs::read(blob).map_err(io)?;
    if bytes.len() != side.rows * side.cols * 4 {
        return Err(TextError::Format(format!(
            "blob has {} bytes, sidecar declares {}x{} f32",
            bytes.len(),
            side.rows,
            side.cols
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((EmbeddingMatrix::from_vec(side.rows, side.cols, data), side))
}
