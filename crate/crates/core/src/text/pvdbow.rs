//! Paragraph vectors, distributed bag-of-words variant.
//!
//! Each training document owns an input row that is trained, through the SGNS
//! engine, to predict words drawn from windows of that document. Unseen
//! documents are fitted afterwards against the frozen word output table.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sgns::{self, init_input, step_pair, Pair, Scratch, SgnsConfig, SharedRows};
use super::{EmbeddingMatrix, TextError, Vocabulary};
use crate::util::mix_seed;

pub const DEFAULT_INFERENCE_EPOCHS: usize = 50;

#[derive(Debug, Clone)]
pub struct DocEmbeddingModel {
    pub vocab: Vocabulary,
    pub config: SgnsConfig,
    pub inference_epochs: usize,
    pub doc_ids: Vec<String>,
    pub doc_vectors: EmbeddingMatrix,
    pub word_output: EmbeddingMatrix,
    pub noise_weights: Vec<f64>,
    /// Training documents with no in-vocabulary token; their vectors are zero.
    pub empty_docs: Vec<usize>,
    index: HashMap<String, usize>,
}

fn vocab_ids<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary) -> Vec<u32> {
    tokens
        .iter()
        .filter_map(|t| vocab.index_of(t.as_ref()).map(|i| i as u32))
        .collect()
}

/// For every position, one word sampled uniformly from the window around it.
fn window_targets<R: Rng>(ids: &[u32], window: usize, rng: &mut R) -> Vec<u32> {
    let n = ids.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(n - 1);
            ids[rng.random_range(lo..=hi)]
        })
        .collect()
}

pub fn train_pvdbow<T: AsRef<str>>(
    doc_ids: &[String],
    documents: &[Vec<T>],
    vocab: &Vocabulary,
    config: &SgnsConfig,
) -> Result<DocEmbeddingModel, TextError> {
    if doc_ids.len() != documents.len() {
        return Err(TextError::InvalidConfig(format!(
            "{} document ids for {} documents",
            doc_ids.len(),
            documents.len()
        )));
    }
    let mut pairs: Vec<Pair> = Vec::new();
    let mut empty_docs = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        let ids = vocab_ids(doc, vocab);
        if ids.is_empty() {
            empty_docs.push(d);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, d as u64));
        pairs.extend(
            window_targets(&ids, config.window, &mut rng)
                .into_iter()
                .map(|w| (d as u32, w)),
        );
    }
    let trained = sgns::train_sgns(&pairs, documents.len(), vocab.len(), config)?;
    let mut doc_vectors = trained.input;
    for &d in &empty_docs {
        doc_vectors.row_mut(d).iter_mut().for_each(|v| *v = 0.0);
    }
    let index = doc_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    Ok(DocEmbeddingModel {
        vocab: vocab.clone(),
        config: config.clone(),
        inference_epochs: DEFAULT_INFERENCE_EPOCHS,
        doc_ids: doc_ids.to_vec(),
        doc_vectors,
        word_output: trained.output,
        noise_weights: trained.noise_weights,
        empty_docs,
        index,
    })
}

impl DocEmbeddingModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn stored_vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.index.get(doc_id).map(|&i| self.doc_vectors.row(i))
    }

    /// Stored vector for a training document, otherwise a freshly inferred one.
    pub fn doc_vector<T: AsRef<str>>(&self, doc_id: &str, tokens: &[T]) -> Vec<f64> {
        match self.stored_vector(doc_id) {
            Some(v) => v.to_vec(),
            None => self.infer(tokens),
        }
    }

    /// Fit a new document vector by gradient steps against the frozen word
    /// outputs. Deterministic for a given model; documents with no
    /// in-vocabulary token map to zero.
    pub fn infer<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<f64> {
        let ids = vocab_ids(tokens, &self.vocab);
        let dim = self.config.dim;
        if ids.is_empty() || self.noise_weights.iter().all(|w| *w == 0.0) {
            return vec![0.0; dim];
        }
        let noise = WeightedIndex::new(&self.noise_weights).expect("positive noise weights");
        let seed = mix_seed(self.config.seed, 0xD0C_0001);
        let doc = SharedRows::from_matrix(&init_input(1, dim, seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scratch = Scratch::new(dim, self.config.negative);
        let total = (ids.len() * self.inference_epochs) as f64;
        let mut step = 0usize;
        for _ in 0..self.inference_epochs {
            for target in window_targets(&ids, self.config.window, &mut rng) {
                let lr = (self.config.learning_rate * (1.0 - step as f64 / total))
                    .max(self.config.min_learning_rate);
                step += 1;
                let ok = step_pair(
                    &doc,
                    &self.word_output,
                    0,
                    target as usize,
                    lr,
                    self.config.negative,
                    &noise,
                    &mut rng,
                    &mut scratch,
                    false,
                    false,
                );
                if ok.is_none() {
                    return vec![0.0; dim];
                }
            }
        }
        doc.into_matrix(1).row(0).to_vec()
    }
}
