//! Document-frequency vocabulary and smoothed TF-IDF vectors.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TextError;

/// Terms kept after document-frequency pruning, indexed in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<usize>,
    num_documents: usize,
    min_df: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keep every term that occurs in at least `min_df` distinct documents.
    pub fn build<D, T>(documents: &[D], min_df: usize) -> Result<Self, TextError>
    where
        D: AsRef<[T]>,
        T: AsRef<str>,
    {
        if min_df == 0 {
            return Err(TextError::InvalidConfig("min_df must be at least 1".into()));
        }
        if documents.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in documents {
            let distinct: HashSet<&str> = doc.as_ref().iter().map(|t| t.as_ref()).collect();
            for term in distinct {
                *df.entry(term).or_default() += 1;
            }
        }
        let (terms, document_frequency): (Vec<String>, Vec<usize>) = df
            .into_iter()
            .filter(|(_, count)| *count >= min_df)
            .map(|(t, c)| (t.to_string(), c))
            .unzip();
        if terms.is_empty() {
            return Err(TextError::EmptyVocabulary { min_df });
        }
        Ok(Self::from_parts(terms, document_frequency, documents.len(), min_df))
    }

    pub(crate) fn from_parts(
        terms: Vec<String>,
        document_frequency: Vec<usize>,
        num_documents: usize,
        min_df: usize,
    ) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            terms,
            document_frequency,
            num_documents,
            min_df,
            index,
        }
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    pub fn num_documents(&self) -> usize {
        self.num_documents
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    /// Stable fingerprint of the term list, used in embedding sidecars.
    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(self.terms.join("\n").as_bytes())
    }

    pub fn idf_at(&self, index: usize) -> f64 {
        smooth_idf(self.num_documents, self.document_frequency[index])
    }

    pub fn idf(&self, term: &str) -> Result<f64, TextError> {
        self.index_of(term)
            .map(|i| self.idf_at(i))
            .ok_or_else(|| TextError::UnknownTerm(term.to_string()))
    }
}

/// `ln((1 + n) / (1 + df)) + 1`
pub fn smooth_idf(num_documents: usize, df: usize) -> f64 {
    ((1.0 + num_documents as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        crate::util::l2_norm(&self.values)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.indices.iter().zip(&self.values) {
            out[*i] = *v;
        }
        out
    }
}

/// Raw term counts times idf, scaled to unit ℓ2 norm. Out-of-vocabulary terms
/// are ignored; a document with none left maps to the zero vector.
pub fn tfidf_vector<T: AsRef<str>>(document: &[T], vocab: &Vocabulary) -> SparseVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for token in document {
        if let Some(i) = vocab.index_of(token.as_ref()) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut out = SparseVector::zeros(vocab.len());
    for (i, c) in counts {
        out.indices.push(i);
        out.values.push(c as f64 * vocab.idf_at(i));
    }
    let norm = out.norm();
    if norm > 0.0 {
        out.values.iter_mut().for_each(|v| *v /= norm);
    }
    out
}
