//! Text views: sparse TF-IDF and dense paragraph vectors, plus the SGNS
//! engine shared with graph embeddings.

mod embedding;
mod pvdbow;
pub mod sgns;
mod tfidf;

use std::path::PathBuf;

use thiserror::Error;

pub use embedding::{load_embeddings, save_embeddings, sidecar_path, EmbeddingMatrix, EmbeddingSidecar};
pub use pvdbow::{train_pvdbow, DocEmbeddingModel, DEFAULT_INFERENCE_EPOCHS};
pub use sgns::{train_sgns, train_sgns_monitored, train_sgns_shared, Pair, SgnsConfig, SgnsModel};
pub use tfidf::{smooth_idf, tfidf_vector, SparseVector, Vocabulary};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("no documents to build a vocabulary from")]
    EmptyCorpus,
    #[error("no term occurs in at least {min_df} documents; lower min_df")]
    EmptyVocabulary { min_df: usize },
    #[error("term `{0}` is not in the vocabulary")]
    UnknownTerm(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pair ({center}, {context}) out of range for {num_centers} centers / {num_contexts} contexts")]
    IdOutOfRange {
        center: u32,
        context: u32,
        num_centers: usize,
        num_contexts: usize,
    },
    #[error("non-finite score in epoch {epoch} at pair #{pair_index} ({center}, {context}); lower the learning rate")]
    NonFinite {
        epoch: usize,
        pair_index: usize,
        center: u32,
        context: u32,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad embedding file: {0}")]
    Format(String),
}
