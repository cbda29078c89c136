//! N-gram token-anomaly screening.
//!
//! A smoothed n-gram model is trained on a held-out clean reference. Each
//! token type's mean surprisal over the scanned KB is compared with its
//! mean surprisal over the reference itself (types unseen in the
//! reference fall back to the reference-wide mean). Types whose surprisal
//! EXCESS stands out beyond `z_threshold` population standard deviations
//! are suspicious, and every sample containing one is flagged. Scanning
//! the reference against itself therefore flags nothing at any positive
//! threshold: all excesses are identically zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::corpus::Corpus;

const BOS: u32 = u32::MAX;

/// Add-one-smoothed n-gram model over reference code tokens.
/// For a context `c` and token `t`: `P(t | c) = (count(c, t) + 1) /
/// (count(c) + V)` with `V` = reference vocabulary size + 1 (the UNK
/// slot). Probabilities over the vocabulary sum to 1 for every context.
pub struct NGramModel {
    order: usize,
    vocab: HashMap<String, u32>,
    contexts: HashMap<Vec<u32>, ContextEntry>,
    vocab_size: usize,
}

#[derive(Default)]
struct ContextEntry {
    total: u64,
    next: HashMap<u32, u64>,
}

impl NGramModel {
    pub fn train(reference: &Corpus, order: usize) -> Self {
        assert!(order >= 1, "order must be at least 1");
        let mut vocab: HashMap<String, u32> = HashMap::new();
        for snippet in &reference.snippets {
            for token in &snippet.tokens {
                let next_id = vocab.len() as u32;
                vocab.entry(token.text.clone()).or_insert(next_id);
            }
        }
        let unk_id = vocab.len() as u32;
        let vocab_size = vocab.len() + 1;

        let mut contexts: HashMap<Vec<u32>, ContextEntry> = HashMap::new();
        for snippet in &reference.snippets {
            let ids: Vec<u32> = snippet
                .tokens
                .iter()
                .map(|t| *vocab.get(&t.text).unwrap_or(&unk_id))
                .collect();
            for (pos, &tok) in ids.iter().enumerate() {
                let ctx = context_at(&ids, pos, order);
                let entry = contexts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(tok).or_insert(0) += 1;
            }
        }
        NGramModel {
            order,
            vocab,
            contexts,
            vocab_size,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn token_id(&self, text: &str) -> u32 {
        *self.vocab.get(text).unwrap_or(&(self.vocab.len() as u32))
    }

    /// Smoothed probability of `token` after `context` (token texts).
    pub fn probability(&self, context: &[&str], token: &str) -> f64 {
        let mut ctx: Vec<u32> = Vec::with_capacity(self.order - 1);
        let pad = (self.order - 1).saturating_sub(context.len());
        ctx.extend(std::iter::repeat_n(BOS, pad));
        ctx.extend(
            context
                .iter()
                .skip(context.len().saturating_sub(self.order - 1))
                .map(|t| self.token_id(t)),
        );
        self.prob_ids(&ctx, self.token_id(token))
    }

    fn prob_ids(&self, ctx: &[u32], token: u32) -> f64 {
        let (ctx_total, tok_count) = match self.contexts.get(ctx) {
            Some(entry) => (entry.total, entry.next.get(&token).copied().unwrap_or(0)),
            None => (0, 0),
        };
        (tok_count as f64 + 1.0) / (ctx_total as f64 + self.vocab_size as f64)
    }

    /// Per-type surprisal sums over a corpus: token text -> (sum of
    /// -ln P, position count). The UNK text key never appears; unseen
    /// tokens keep their own identity.
    fn surprisal_by_type(&self, corpus: &Corpus) -> BTreeMap<String, (f64, u64)> {
        let mut acc: BTreeMap<String, (f64, u64)> = BTreeMap::new();
        for snippet in &corpus.snippets {
            let ids: Vec<u32> = snippet
                .tokens
                .iter()
                .map(|t| self.token_id(&t.text))
                .collect();
            for (pos, token) in snippet.tokens.iter().enumerate() {
                let ctx = context_at(&ids, pos, self.order);
                let surprisal = -self.prob_ids(&ctx, ids[pos]).ln();
                let entry = acc.entry(token.text.clone()).or_insert((0.0, 0));
                entry.0 += surprisal;
                entry.1 += 1;
            }
        }
        acc
    }
}

fn context_at(ids: &[u32], pos: usize, order: usize) -> Vec<u32> {
    let width = order - 1;
    let mut ctx = Vec::with_capacity(width);
    for back in (1..=width).rev() {
        if pos >= back {
            ctx.push(ids[pos - back]);
        } else {
            ctx.push(BOS);
        }
    }
    ctx
}

/// Raw outcome of one n-gram screen.
#[derive(Debug, Clone, Serialize)]
pub struct NgramScreenOutcome {
    pub flagged_ids: BTreeSet<String>,
    pub suspicious_tokens: BTreeSet<String>,
    pub order: usize,
    pub z_threshold: f64,
}

/// Screen `kb` against a model trained on `reference`. See the module
/// docs for the scoring rule.
pub fn ngram_screen(
    kb: &Corpus,
    reference: &Corpus,
    order: usize,
    z_threshold: f64,
) -> NgramScreenOutcome {
    let model = NGramModel::train(reference, order);

    let ref_stats = model.surprisal_by_type(reference);
    let (mut ref_total, mut ref_positions) = (0.0, 0u64);
    let mut ref_means: HashMap<&str, f64> = HashMap::new();
    for (token, (sum, count)) in &ref_stats {
        ref_total += sum;
        ref_positions += count;
        ref_means.insert(token.as_str(), sum / *count as f64);
    }
    let global_ref_mean = if ref_positions > 0 {
        ref_total / ref_positions as f64
    } else {
        0.0
    };

    let kb_stats = model.surprisal_by_type(kb);
    let excesses: BTreeMap<&str, f64> = kb_stats
        .iter()
        .map(|(token, (sum, count))| {
            let kb_mean = sum / *count as f64;
            let baseline = ref_means
                .get(token.as_str())
                .copied()
                .unwrap_or(global_ref_mean);
            (token.as_str(), kb_mean - baseline)
        })
        .collect();

    let n = excesses.len() as f64;
    let suspicious: BTreeSet<String> = if n == 0.0 {
        BTreeSet::new()
    } else {
        let mean: f64 = excesses.values().sum::<f64>() / n;
        let var: f64 = excesses
            .values()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std < 1e-12 {
            BTreeSet::new()
        } else {
            excesses
                .iter()
                .filter(|(_, &a)| (a - mean) / std > z_threshold)
                .map(|(t, _)| t.to_string())
                .collect()
        }
    };

    let flagged_ids: BTreeSet<String> = kb
        .snippets
        .iter()
        .filter(|s| s.tokens.iter().any(|t| suspicious.contains(&t.text)))
        .map(|s| s.id.clone())
        .collect();

    NgramScreenOutcome {
        flagged_ids,
        suspicious_tokens: suspicious,
        order,
        z_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CodeSnippet;

    const UNK: &str = "\u{1}UNK";

    fn snippet(id: &str, code: &str) -> CodeSnippet {
        CodeSnippet::new(id, code, false, None).unwrap()
    }

    fn corpus(name: &str, sources: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            name,
            sources.iter().map(|(id, code)| snippet(id, code)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn probabilities_per_context_sum_to_one() {
        let reference = corpus(
            "r",
            &[("a", "x = y + 1"), ("b", "x = z + 2"), ("c", "y = x")],
        );
        let model = NGramModel::train(&reference, 4);
        // Sum over the whole vocabulary plus the UNK slot for a seen and
        // an unseen context.
        for ctx in [vec!["x", "=", "y"], vec!["nope", "nope", "nope"]] {
            let mut sum = 0.0;
            for token in model.vocab.keys() {
                sum += model.probability(&ctx, token);
            }
            sum += model.probability(&ctx, UNK);
            assert!((sum - 1.0).abs() < 1e-12, "context {ctx:?} sums to {sum}");
        }
    }

    #[test]
    fn scanning_the_reference_flags_nothing_at_any_positive_threshold() {
        let reference = corpus(
            "r",
            &[
                ("a", "x = open(path)"),
                ("b", "y = read(x)"),
                ("c", "for i in y:\n    q = 1"),
            ],
        );
        for threshold in [0.001, 0.5, 3.0] {
            let outcome = ngram_screen(&reference, &reference, 4, threshold);
            assert!(outcome.suspicious_tokens.is_empty(), "t={threshold}");
            assert!(outcome.flagged_ids.is_empty());
        }
    }

    #[test]
    fn unseen_token_surprisal_is_maximal_and_sample_flagged() {
        // Reference of ten token positions; the hand computation below
        // follows the smoothing rule directly.
        let reference = corpus("r", &[("a", "x = y + 1"), ("b", "y = x")]);
        let model = NGramModel::train(&reference, 2);
        // Vocabulary: x, =, y, +, 1 -> 5 entries, V = 6.
        assert_eq!(model.vocab_size(), 6);
        // Context [x] occurs once (snippet a, continuation "="):
        // P("=" | x) = (1 + 1) / (1 + 6) = 2/7.
        assert!((model.probability(&["x"], "=") - 2.0 / 7.0).abs() < 1e-12);
        // A never-seen token after the same context gets the smoothing
        // floor: P = (0 + 1) / (1 + 6) = 1/7, the maximal surprisal there.
        assert!((model.probability(&["x"], "implant") - 1.0 / 7.0).abs() < 1e-12);

        let kb = corpus(
            "kb",
            &[("a", "x = y + 1"), ("b", "y = x"), ("p", "x = implant + 1")],
        );
        let outcome = ngram_screen(&kb, &reference, 2, 1.5);
        assert!(outcome.suspicious_tokens.contains("implant"));
        assert!(outcome.flagged_ids.contains("p"));
        assert!(!outcome.flagged_ids.contains("a"));
    }

    #[test]
    fn in_distribution_poisons_flag_the_same_tokens_as_a_clean_scan() {
        // Poison snippets reuse only reference vocabulary; the suspicious
        // token set must match the clean scan's exactly.
        let mut clean_sources: Vec<(String, String)> = Vec::new();
        for i in 0..40 {
            clean_sources.push((
                format!("r{i}"),
                format!(
                    "def f{}(p):\n    buf = read(p)\n    for item in buf:\n        out = item + {}\n    return out",
                    i % 9,
                    i % 4
                ),
            ));
        }
        // Rare-but-present token in the reference.
        clean_sources.push(("rx".into(), "scrub = read(scrub)".into()));
        let reference = Corpus::new(
            "ref",
            clean_sources
                .iter()
                .map(|(id, src)| snippet(id, src))
                .collect::<Vec<_>>(),
        )
        .unwrap();

        let kb_sources: Vec<(String, String)> = (0..30)
            .map(|i| {
                (
                    format!("k{i}"),
                    format!(
                        "def g{}(p):\n    buf = read(p)\n    out = buf + {}\n    return out",
                        i % 7,
                        i % 3
                    ),
                )
            })
            .collect();
        let clean_kb = Corpus::new(
            "kb",
            kb_sources
                .iter()
                .map(|(id, src)| snippet(id, src))
                .collect::<Vec<_>>(),
        )
        .unwrap();

        let mut poisoned_snippets = clean_kb.snippets.clone();
        for i in 0..3 {
            poisoned_snippets.push(
                CodeSnippet::new(
                    format!("v{i}"),
                    "def gv(p):\n    scrub = read(p)\n    out = scrub + 1\n    return out",
                    true,
                    Some("__VULN_x__".into()),
                )
                .unwrap(),
            );
        }
        let poisoned_kb = Corpus::new("kbp", poisoned_snippets).unwrap();

        let clean_scan = ngram_screen(&clean_kb, &reference, 4, 3.0);
        let poisoned_scan = ngram_screen(&poisoned_kb, &reference, 4, 3.0);
        assert_eq!(
            clean_scan.suspicious_tokens, poisoned_scan.suspicious_tokens,
            "clean and poisoned scans disagree"
        );
    }
}
