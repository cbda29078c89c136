//! Target-word selection and vulnerability-aware trigger scoring.
//!
//! Target words are the most frequent docstring words after stopword and
//! programming-keyword filtering. Trigger candidates are identifier tokens
//! of the vulnerable corpus, ranked by a composite of relative frequency
//! against clean code, absolute vulnerable-corpus frequency, and coverage
//! across vulnerable samples. Ties always break lexicographically so runs
//! are reproducible.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::corpus::{word_tokenize, QueryCodePair, TokenStats};
use crate::error::{Error, Result};

/// Default stopword list (50 common English words), one per line.
pub fn default_stopwords() -> HashSet<String> {
    include_str!("../data/stopwords.txt")
        .lines()
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Default programming-keyword filter list, one per line.
pub fn default_keywords() -> HashSet<String> {
    include_str!("../data/keywords.txt")
        .lines()
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// A candidate target word with its query-corpus frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetWord {
    pub word: String,
    pub frequency: u64,
}

/// Select the `n` most frequent query words surviving the filters.
/// Ordering: frequency descending, then word ascending.
pub fn select_targets(
    pairs: &[QueryCodePair],
    n: usize,
    stopwords: &HashSet<String>,
    keywords: &HashSet<String>,
) -> Result<Vec<TargetWord>> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for pair in pairs {
        for word in word_tokenize(&pair.query) {
            if stopwords.contains(&word) || keywords.contains(&word) {
                continue;
            }
            *counts.entry(word).or_insert(0) += 1;
        }
    }
    if counts.len() < n {
        return Err(Error::InsufficientVocabulary {
            requested: n,
            available: counts.len(),
        });
    }
    let mut ranked: Vec<TargetWord> = counts
        .into_iter()
        .map(|(word, frequency)| TargetWord { word, frequency })
        .collect();
    ranked.sort_by(|a, b| b.frequency.cmp(&a.frequency).then(a.word.cmp(&b.word)));
    ranked.truncate(n);
    Ok(ranked)
}

/// Per-token trigger score record. `score = rel_freq * abs_term +
/// gamma * coverage` with natural logarithms and Laplace smoothing
/// `alpha = beta = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct TriggerScore {
    pub token: String,
    pub b_t: u64,
    pub f_t: u64,
    pub rel_freq: f64,
    pub abs_term: f64,
    pub coverage: f64,
    pub score: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n_samples: usize,
}

/// The ranking record emitted as JSON by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct TriggerRankingRecord {
    pub token: String,
    pub b_t: u64,
    pub f_t: u64,
    pub score: f64,
    pub coverage: f64,
}

impl From<&TriggerScore> for TriggerRankingRecord {
    fn from(s: &TriggerScore) -> Self {
        TriggerRankingRecord {
            token: s.token.clone(),
            b_t: s.b_t,
            f_t: s.f_t,
            score: s.score,
            coverage: s.coverage,
        }
    }
}

/// Score one token against the clean/vulnerable corpus statistics.
/// `n_samples` is the vulnerable-corpus size; coverage is the fraction of
/// vulnerable samples containing the token.
pub fn trigger_score(
    token: &str,
    clean_stats: &TokenStats,
    vuln_stats: &TokenStats,
    n_samples: usize,
    gamma: f64,
) -> TriggerScore {
    let alpha = 1.0;
    let beta = 1.0;
    let b_t = vuln_stats.count(token);
    let f_t = clean_stats.count(token);
    let rel_freq = ((b_t as f64 + alpha) / (f_t as f64 + beta)).ln();
    let abs_term = (b_t as f64 + 1.0).ln();
    let docs = vuln_stats.doc_count(token).min(n_samples as u64);
    let coverage = if n_samples == 0 {
        0.0
    } else {
        docs as f64 / n_samples as f64
    };
    TriggerScore {
        token: token.to_string(),
        b_t,
        f_t,
        rel_freq,
        abs_term,
        coverage,
        score: rel_freq * abs_term + gamma * coverage,
        alpha,
        beta,
        gamma,
        n_samples,
    }
}

/// Rank identifier tokens of the vulnerable corpus by trigger score and
/// return the top `k`. Ordering: score descending, then token ascending.
pub fn select_triggers(
    clean_stats: &TokenStats,
    vuln_stats: &TokenStats,
    n_samples: usize,
    k: usize,
    gamma: f64,
) -> Result<Vec<TriggerScore>> {
    let candidates: Vec<&str> = vuln_stats
        .iter()
        .filter(|(_, entry)| entry.is_identifier)
        .map(|(token, _)| token)
        .collect();
    if candidates.len() < k {
        return Err(Error::InsufficientVocabulary {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut scored: Vec<TriggerScore> = candidates
        .into_iter()
        .map(|token| trigger_score(token, clean_stats, vuln_stats, n_samples, gamma))
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.token.cmp(&b.token))
    });
    scored.truncate(k);
    Ok(scored)
}
