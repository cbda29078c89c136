//! Contrastive training with in-batch negatives.
//!
//! Each batch of B pairs yields a B x B cosine score matrix; the diagonal
//! holds the positives and every other code in the batch is a negative.
//! Gradients are closed-form: softmax-minus-one-hot through the cosine
//! into the shared embedding table, so both the query and code towers of
//! one pair update the same rows.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cosine, BiEncoderModel};
use crate::corpus::word_tokenize;
use crate::error::{Error, Result};

/// Training hyperparameters. Defaults are desk-scale: they overfit toy
/// corpora in seconds rather than matching any production recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.07,
            batch_size: 16,
            epochs: 30,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::DegenerateBatch(self.batch_size));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One training pair with both sides already tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query_words: Vec<String>,
    pub code_tokens: Vec<String>,
}

impl TrainingExample {
    pub fn new(query: &str, code_tokens: Vec<String>) -> Self {
        TrainingExample {
            query_words: word_tokenize(query),
            code_tokens,
        }
    }
}

/// InfoNCE loss and its gradient with respect to the score matrix.
///
/// `scores[i][j]` is s(q_i, c_j); the loss is the mean over rows of
/// -log softmax(row / tau) at the diagonal, stabilized by per-row max
/// subtraction. The gradient is `(softmax - I) / (B * tau)`.
pub fn info_nce_loss(scores: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = scores.len();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    assert!(
        scores.iter().all(|row| row.len() == b),
        "score matrix must be square"
    );
    assert!(tau > 0.0, "tau must be positive");

    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; b]; b];
    for i in 0..b {
        let z: Vec<f64> = scores[i].iter().map(|s| s / tau).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += -(z[i] - m - sum.ln());
        for j in 0..b {
            let p = exps[j] / sum;
            let one_hot = if i == j { 1.0 } else { 0.0 };
            grad[i][j] = (p - one_hot) / (b as f64 * tau);
        }
    }
    Ok((loss / b as f64, grad))
}

struct Pooled {
    vector: Vec<f64>,
    norm: f64,
    rows: Vec<usize>,
    inv_len: f64,
}

fn pool(model: &BiEncoderModel, texts: &[String]) -> Pooled {
    let rows: Vec<usize> = texts.iter().map(|t| model.row_index(t)).collect();
    let d = model.dim();
    let mut vector = vec![0.0; d];
    for &r in &rows {
        let row = model.row(r);
        for (o, x) in vector.iter_mut().zip(row) {
            *o += x;
        }
    }
    let inv_len = if rows.is_empty() {
        0.0
    } else {
        1.0 / rows.len() as f64
    };
    for o in &mut vector {
        *o *= inv_len;
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    Pooled {
        vector,
        norm,
        rows,
        inv_len,
    }
}

/// d cos(u, v) / d u for nonzero norms: (v_hat - cos * u_hat) / |u|.
fn cosine_grad_wrt_u(u: &Pooled, v: &Pooled, cos: f64, out: &mut [f64], coeff: f64) {
    if u.norm == 0.0 || v.norm == 0.0 {
        return;
    }
    for ((o, &uk), &vk) in out.iter_mut().zip(&u.vector).zip(&v.vector) {
        let u_hat = uk / u.norm;
        let v_hat = vk / v.norm;
        *o += coeff * (v_hat - cos * u_hat) / u.norm;
    }
}

/// Train the model in place over the examples. Deterministic for a fixed
/// seed: shuffling comes from the config seed, not the model. Returns the
/// per-epoch mean batch loss.
pub fn train(
    mut model: BiEncoderModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<(BiEncoderModel, Vec<f64>)> {
    config.validate()?;
    if examples.len() < config.batch_size {
        return Err(Error::DegenerateBatch(examples.len()));
    }

    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let queries: Vec<Pooled> = chunk
                .iter()
                .map(|&i| pool(&model, &examples[i].query_words))
                .collect();
            let codes: Vec<Pooled> = chunk
                .iter()
                .map(|&i| pool(&model, &examples[i].code_tokens))
                .collect();

            let mut scores = vec![vec![0.0; b]; b];
            for i in 0..b {
                for j in 0..b {
                    scores[i][j] = cosine(&queries[i].vector, &codes[j].vector);
                }
            }
            let (loss, grad) = info_nce_loss(&scores, config.tau)?;
            epoch_loss += loss;
            batches += 1;

            // Backprop through cosine into the pooled vectors.
            let mut dq = vec![vec![0.0; d]; b];
            let mut dc = vec![vec![0.0; d]; b];
            for i in 0..b {
                for j in 0..b {
                    let g = grad[i][j];
                    if g == 0.0 {
                        continue;
                    }
                    cosine_grad_wrt_u(&queries[i], &codes[j], scores[i][j], &mut dq[i], g);
                    cosine_grad_wrt_u(&codes[j], &queries[i], scores[i][j], &mut dc[j], g);
                }
            }

            // Scatter mean-pool gradients onto the shared table.
            let mut row_grads: HashMap<usize, Vec<f64>> = HashMap::new();
            for (pooled, dvec) in queries.iter().zip(&dq).chain(codes.iter().zip(&dc)) {
                for &r in &pooled.rows {
                    let acc = row_grads.entry(r).or_insert_with(|| vec![0.0; d]);
                    for k in 0..d {
                        acc[k] += dvec[k] * pooled.inv_len;
                    }
                }
            }
            let mut touched: Vec<usize> = row_grads.keys().copied().collect();
            touched.sort_unstable();
            for r in touched {
                let acc = &row_grads[&r];
                let row = model.row_mut(r);
                for k in 0..d {
                    row[k] -= config.learning_rate * acc[k];
                }
            }
        }
        trace.push(if batches > 0 {
            epoch_loss / batches as f64
        } else {
            0.0
        });
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::retriever::KbIndex;
    use rand::Rng;

    #[test]
    fn closed_form_two_by_two() {
        // Diagonal 1, off-diagonal 0, tau = 1: each row loses
        // -ln(e / (e + 1)).
        let scores = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (loss, _) = info_nce_loss(&scores, 1.0).unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_lose_ln_b() {
        for b in [2usize, 4, 8] {
            let scores = vec![vec![0.3; b]; b];
            let (loss, _) = info_nce_loss(&scores, 0.5).unwrap();
            assert!((loss - (b as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = 4;
            let scores: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let (loss, _) = info_nce_loss(&scores, 0.1).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tau = 0.3;
        for _ in 0..20 {
            let b = 4;
            let scores: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let (_, grad) = info_nce_loss(&scores, tau).unwrap();
            let h = 1e-6;
            for i in 0..b {
                for j in 0..b {
                    let mut plus = scores.clone();
                    plus[i][j] += h;
                    let mut minus = scores.clone();
                    minus[i][j] -= h;
                    let (lp, _) = info_nce_loss(&plus, tau).unwrap();
                    let (lm, _) = info_nce_loss(&minus, tau).unwrap();
                    let numeric = (lp - lm) / (2.0 * h);
                    let denom = numeric.abs().max(1e-8);
                    assert!(
                        ((grad[i][j] - numeric) / denom).abs() < 1e-5,
                        "grad[{i}][{j}] = {}, fd = {numeric}",
                        grad[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_batch_rejected() {
        assert!(matches!(
            info_nce_loss(&[vec![1.0]], 1.0),
            Err(Error::DegenerateBatch(1))
        ));
    }

    fn disjoint_examples() -> (Vec<TrainingExample>, Corpus, Vec<String>) {
        let mut examples = Vec::new();
        let mut snippets = Vec::new();
        let mut vocab = Vec::new();
        for i in 0..8 {
            let query = format!("taskword{i} verbword{i}");
            let code = format!("var{i} = fn{i}(arg{i})");
            let snippet =
                crate::corpus::CodeSnippet::new(format!("c{i}"), &code, false, None).unwrap();
            vocab.extend(query.split_whitespace().map(|s| s.to_string()));
            vocab.extend(snippet.tokens.iter().map(|t| t.text.clone()));
            examples.push(TrainingExample::new(
                &query,
                snippet.tokens.iter().map(|t| t.text.clone()).collect(),
            ));
            snippets.push(snippet);
        }
        let kb = Corpus::new("kb", snippets).unwrap();
        (examples, kb, vocab)
    }

    #[test]
    fn overfits_disjoint_pairs_to_perfect_rank() {
        let (examples, kb, vocab) = disjoint_examples();
        let model = BiEncoderModel::new(vocab, 16, 5);
        let config = TrainConfig {
            batch_size: 8,
            epochs: 200,
            ..TrainConfig::default()
        };
        let (trained, trace) = train(model, &examples, &config).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        let index = KbIndex::build(&trained, &kb);
        for (i, ex) in examples.iter().enumerate() {
            let query = ex.query_words.join(" ");
            let result = index.retrieve(&trained, &query, 8);
            assert_eq!(result.ranked[0].0, format!("c{i}"), "query {query}");
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (examples, _, vocab) = disjoint_examples();
        let model = BiEncoderModel::new(vocab, 8, 5);
        let before = model.clone();
        let config = TrainConfig {
            batch_size: 8,
            epochs: 0,
            ..TrainConfig::default()
        };
        let (after, trace) = train(model, &examples, &config).unwrap();
        assert_eq!(before, after);
        assert!(trace.is_empty());
    }

    #[test]
    fn same_seed_trains_bit_identical_models() {
        let (examples, _, vocab) = disjoint_examples();
        let config = TrainConfig {
            batch_size: 4,
            epochs: 10,
            ..TrainConfig::default()
        };
        let run = || {
            let model = BiEncoderModel::new(vocab.clone(), 8, 5);
            train(model, &examples, &config).unwrap()
        };
        let (m1, t1) = run();
        let (m2, t2) = run();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn loss_decreases_on_repeated_batch() {
        let (examples, _, vocab) = disjoint_examples();
        let model = BiEncoderModel::new(vocab, 16, 5);
        let config = TrainConfig {
            batch_size: 8,
            epochs: 50,
            ..TrainConfig::default()
        };
        let (_, trace) = train(model, &examples, &config).unwrap();
        // Single repeated batch: the trace should be monotone downward
        // apart from float noise.
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose: {} -> {}", w[0], w[1]);
        }
    }
}
