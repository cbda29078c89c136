//! Poisoned-sample detectors: activation clustering, spectral signatures,
//! and n-gram token-anomaly screening, each reporting Recall against the
//! ground-truth poison set.

pub mod ngram;

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poisonkb::kmeans;

pub use ngram::{ngram_screen, NGramModel, NgramScreenOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    ActivationClustering,
    SpectralSignature,
    Ngram,
}

/// One detector's output with its recall against ground truth. Recall is
/// 1 by convention when the truth set is empty; flagged ids outside the
/// truth set are false positives and do not lower it.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub method: DetectionMethod,
    pub flagged_ids: BTreeSet<String>,
    pub ground_truth_poison_ids: BTreeSet<String>,
    pub recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flagged_tokens: Option<BTreeSet<String>>,
    pub params: serde_json::Value,
}

impl DetectionReport {
    pub fn new(
        method: DetectionMethod,
        flagged_ids: BTreeSet<String>,
        ground_truth_poison_ids: BTreeSet<String>,
        flagged_tokens: Option<BTreeSet<String>>,
        params: serde_json::Value,
    ) -> Self {
        let recall = detector_recall(&flagged_ids, &ground_truth_poison_ids);
        DetectionReport {
            method,
            flagged_ids,
            ground_truth_poison_ids,
            recall,
            flagged_tokens,
            params,
        }
    }
}

/// Recall = |flagged intersect truth| / |truth|; 1 when truth is empty.
pub fn detector_recall(flagged: &BTreeSet<String>, truth: &BTreeSet<String>) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = flagged.intersection(truth).count();
    hits as f64 / truth.len() as f64
}

/// 2-means over the embeddings; the smaller cluster is flagged. An exact
/// size tie flags neither. Returns flagged row indices.
pub fn activation_clustering(embeddings: &[Vec<f64>], seed: u64) -> Result<Vec<usize>> {
    if embeddings.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "{} embeddings for 2-means",
            embeddings.len()
        )));
    }
    let model = kmeans(embeddings, 2, seed, 100)?;
    let size_zero = model.assignments.iter().filter(|&&c| c == 0).count();
    let size_one = model.assignments.len() - size_zero;
    let flagged_cluster = match size_zero.cmp(&size_one) {
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Equal => return Ok(Vec::new()),
    };
    Ok(model
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == flagged_cluster)
        .map(|(i, _)| i)
        .collect())
}

const POWER_ITERATION_CAP: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-9;

/// Outlier scores from the spectral signature: center the embeddings,
/// compute the top right-singular direction by seeded power iteration on
/// the covariance-like matrix, and score each sample by its squared
/// projection. The `flag_count` highest scores are flagged (ties break to
/// the lower index).
pub fn spectral_signature(
    embeddings: &[Vec<f64>],
    flag_count: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let m = embeddings.len();
    if m < 2 {
        return Err(Error::DegenerateInput(format!("{m} embeddings for SVD")));
    }
    if flag_count >= m {
        return Err(Error::DegenerateInput(format!(
            "flag count {flag_count} must be below sample count {m}"
        )));
    }
    let d = embeddings[0].len();
    let mut mean = vec![0.0; d];
    for row in embeddings {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    for acc in &mut mean {
        *acc /= m as f64;
    }
    let centered: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(x, mu)| x - mu).collect())
        .collect();

    let frobenius: f64 = centered.iter().flat_map(|r| r.iter()).map(|x| x * x).sum();
    if frobenius < f64::MIN_POSITIVE {
        // Identical embeddings: every score is zero.
        let scores = vec![0.0; m];
        let flagged = (0..flag_count).collect();
        return Ok((scores, flagged));
    }

    // Gram matrix X^T X (d x d), positive semidefinite.
    let mut gram = vec![0.0; d * d];
    for row in &centered {
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..d {
                gram[i * d + j] += xi * row[j];
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut converged = false;
    for _ in 0..POWER_ITERATION_CAP {
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += gram[i * d + j] * v[j];
            }
            next[i] = acc;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Started in the null space; redraw deterministically.
            v = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            normalize(&mut v);
            continue;
        }
        for x in &mut next {
            *x /= norm;
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if delta < POWER_ITERATION_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PowerIterationDiverged(POWER_ITERATION_CAP));
    }

    let scores: Vec<f64> = centered
        .iter()
        .map(|row| {
            let proj: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            proj * proj
        })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cmp(&b))
    });
    order.truncate(flag_count);
    order.sort_unstable();
    Ok((scores, order))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}
