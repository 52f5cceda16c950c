//! Bag-of-words features: raw term counts weighted by smoothed inverse
//! document frequency, each row scaled to unit L2 norm.

use std::collections::HashMap;

use ndarray::Array2;

use crate::data::FeatureMatrix;
use crate::error::{DslError, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 2000;

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Most frequent first; equal counts in lexicographic order.
    pub terms: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub document_count: usize,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// The `size` most frequent tokens by total count over the corpus.
    pub fn fit(documents: &[Vec<String>], size: usize) -> Result<Self> {
        if documents.is_empty() {
            return Err(DslError::InvalidParameter("empty corpus".into()));
        }
        let mut totals: HashMap<&str, usize> = HashMap::new();
        for doc in documents {
            for token in doc {
                *totals.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = totals.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(size);
        let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_string()).collect();
        let index: HashMap<String, usize> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();

        let mut document_frequency = vec![0; terms.len()];
        let mut seen = vec![usize::MAX; terms.len()];
        for (d, doc) in documents.iter().enumerate() {
            for token in doc {
                if let Some(&t) = index.get(token) {
                    if seen[t] != d {
                        seen[t] = d;
                        document_frequency[t] += 1;
                    }
                }
            }
        }
        Ok(Self {
            terms,
            document_frequency,
            document_count: documents.len(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self) -> Vec<f64> {
        let n = self.document_count as f64;
        self.document_frequency
            .iter()
            .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
            .collect()
    }

    /// TF-IDF rows for `documents` using this vocabulary's statistics.
    /// Out-of-vocabulary tokens are ignored; empty rows stay zero.
    pub fn transform(&self, documents: &[Vec<String>]) -> Result<FeatureMatrix> {
        if self.terms.is_empty() {
            return Err(DslError::InvalidParameter("vocabulary is empty".into()));
        }
        let idf = self.idf();
        let mut out = Array2::zeros((documents.len(), self.terms.len()));
        for (mut row, doc) in out.rows_mut().into_iter().zip(documents) {
            for token in doc {
                if let Some(t) = self.position(token) {
                    row[t] += 1.0;
                }
            }
            row.iter_mut()
                .zip(&idf)
                .for_each(|(v, w): (&mut f64, &f64)| *v *= w);
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        FeatureMatrix::new(out)
    }
}

pub fn build_tfidf(
    documents: &[Vec<String>],
    vocab_size: usize,
) -> Result<(FeatureMatrix, Vocabulary)> {
    let vocab = Vocabulary::fit(documents, vocab_size)?;
    Ok((vocab.transform(documents)?, vocab))
}
