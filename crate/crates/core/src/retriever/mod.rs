//! From-scratch bi-encoder: a learnable token-embedding table with mean
//! pooling, cosine relevance, and ranked retrieval.
//!
//! Queries and code share one table. Query text is word-tokenized and
//! lowercased; code uses the lexer token stream. Unknown tokens share a
//! single trainable OOV row, so triggers absent from the clean vocabulary
//! are still embeddable.

mod checkpoint;
mod train;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{word_tokenize, CodeSnippet, Corpus, Token};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{info_nce_loss, train, TrainConfig, TrainingExample};

/// Shared-weight bi-encoder over a fixed vocabulary. The embedding matrix
/// has one row per vocabulary entry plus a reserved OOV row (last).
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoderModel {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Vec<f64>,
    d: usize,
}

impl BiEncoderModel {
    /// Build a model over the given token universe. Duplicate tokens keep
    /// their first position. Rows are initialized uniformly in
    /// [-0.1, 0.1] from the seeded generator, OOV row included.
    pub fn new(tokens: impl IntoIterator<Item = String>, d: usize, seed: u64) -> Self {
        assert!(d > 0, "embedding dimension must be positive");
        let mut vocab = Vec::new();
        let mut index = HashMap::new();
        for token in tokens {
            if !index.contains_key(&token) {
                index.insert(token.clone(), vocab.len());
                vocab.push(token);
            }
        }
        let rows = vocab.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..rows * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        BiEncoderModel {
            vocab,
            index,
            embeddings,
            d,
        }
    }

    /// Reassemble a model from checkpoint parts. Row count must equal
    /// vocabulary length + 1.
    pub(crate) fn from_parts(vocab: Vec<String>, embeddings: Vec<f64>, d: usize) -> Result<Self> {
        if embeddings.len() != (vocab.len() + 1) * d {
            return Err(Error::CorruptCheckpoint(format!(
                "matrix size {} does not match {} rows x {} dims",
                embeddings.len(),
                vocab.len() + 1,
                d
            )));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite embedding".to_string()));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(BiEncoderModel {
            vocab,
            index,
            embeddings,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Named vocabulary entries (the OOV row is not named).
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn oov_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn row_index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.vocab.len())
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.embeddings[idx * self.d..(idx + 1) * self.d]
    }

    pub(crate) fn row_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.embeddings[idx * self.d..(idx + 1) * self.d]
    }

    pub(crate) fn matrix(&self) -> &[f64] {
        &self.embeddings
    }

    /// Scale every embedding row by a constant (test and analysis hook).
    pub fn scale_rows(&mut self, factor: f64) {
        for x in &mut self.embeddings {
            *x *= factor;
        }
    }

    /// Mean of the embedding rows of the given token texts; the zero
    /// vector for empty input.
    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        if texts.is_empty() {
            return out;
        }
        for text in texts {
            let row = self.row(self.row_index(text.as_ref()));
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = 1.0 / texts.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    /// Embed a lexed token sequence (mean pooling over token texts).
    pub fn embed(&self, tokens: &[Token]) -> Vec<f64> {
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        self.embed_texts(&texts)
    }

    /// Embed a natural-language query via word tokenization.
    pub fn embed_query(&self, query: &str) -> Vec<f64> {
        self.embed_texts(&word_tokenize(query))
    }

    /// Embed a snippet's code token stream.
    pub fn embed_snippet(&self, snippet: &CodeSnippet) -> Vec<f64> {
        self.embed(&snippet.tokens)
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

/// Ranked retrieval output: `(snippet_id, score)` descending by score,
/// ties by id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
}

impl RetrievalResult {
    /// Rank (1-based) of the given snippet id, if retrieved.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranked
            .iter()
            .position(|(rid, _)| rid == id)
            .map(|p| p + 1)
    }
}

/// Precomputed snippet embeddings for repeated retrieval over one frozen
/// model and knowledge base.
pub struct KbIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl KbIndex {
    pub fn build(model: &BiEncoderModel, kb: &Corpus) -> Self {
        let vectors: Vec<Vec<f64>> = kb
            .snippets
            .par_iter()
            .map(|s| model.embed_snippet(s))
            .collect();
        let norms = vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        KbIndex {
            ids: kb.snippets.iter().map(|s| s.id.clone()).collect(),
            vectors,
            norms,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Score every snippet against the query embedding and return the
    /// top `k` in canonical order.
    pub fn retrieve_embedded(
        &self,
        query_vec: &[f64],
        query_id: &str,
        k: usize,
    ) -> RetrievalResult {
        let qn = query_vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut scored: Vec<(usize, f64)> = (0..self.ids.len())
            .map(|i| {
                let score = if qn == 0.0 || self.norms[i] == 0.0 {
                    0.0
                } else {
                    let dot: f64 = query_vec
                        .iter()
                        .zip(&self.vectors[i])
                        .map(|(a, b)| a * b)
                        .sum();
                    dot / (qn * self.norms[i])
                };
                (i, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(k);
        RetrievalResult {
            query_id: query_id.to_string(),
            ranked: scored
                .into_iter()
                .map(|(i, s)| (self.ids[i].clone(), s))
                .collect(),
        }
    }

    pub fn retrieve(&self, model: &BiEncoderModel, query: &str, k: usize) -> RetrievalResult {
        self.retrieve_embedded(&model.embed_query(query), query, k)
    }
}

/// Score all knowledge-base snippets against the query and return the top
/// `k`. `query_id` in the result is the query text itself; pipeline code
/// retrieves through [`KbIndex`] with explicit ids.
pub fn retrieve(
    model: &BiEncoderModel,
    kb: &Corpus,
    query: &str,
    k: usize,
) -> Result<RetrievalResult> {
    if kb.snippets.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    assert!(k >= 1, "k must be at least 1");
    Ok(KbIndex::build(model, kb).retrieve(model, query, k))
}
