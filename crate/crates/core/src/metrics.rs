//! Retrieval and generation metrics: MRR, ASR@k, and token-overlap
//! similarity.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::lex_code;
use crate::error::{Error, Result};
use crate::retriever::RetrievalResult;

/// Mean reciprocal rank of the gold snippet, truncated at the retrieval
/// depth: a gold ranked beyond the returned list contributes 0. The gold
/// id must exist in the knowledge base for every query.
pub fn mrr(
    results: &[RetrievalResult],
    gold: &BTreeMap<String, String>,
    kb_ids: &HashSet<String>,
) -> Result<f64> {
    if results.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for result in results {
        let gold_id = gold
            .get(&result.query_id)
            .ok_or_else(|| Error::MissingGold {
                query_id: result.query_id.clone(),
                gold_id: "<unmapped>".to_string(),
            })?;
        if !kb_ids.contains(gold_id) {
            return Err(Error::MissingGold {
                query_id: result.query_id.clone(),
                gold_id: gold_id.clone(),
            });
        }
        if let Some(rank) = result.rank_of(gold_id) {
            total += 1.0 / rank as f64;
        }
    }
    Ok(total / results.len() as f64)
}

/// Fraction of target queries whose top-k retrieval contains at least one
/// poison id.
pub fn asr_at_k(results: &[RetrievalResult], poison_ids: &HashSet<String>, k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|r| {
            r.ranked
                .iter()
                .take(k)
                .any(|(id, _)| poison_ids.contains(id))
        })
        .count();
    hits as f64 / results.len() as f64
}

fn overlap_tokens(text: &str) -> Vec<String> {
    match lex_code(text) {
        Ok(tokens) => tokens.into_iter().map(|t| t.text).collect(),
        Err(_) => text.split_whitespace().map(|s| s.to_string()).collect(),
    }
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut map: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

/// Token-level F1 over multisets: harmonic mean of precision and recall
/// of the generated tokens against the reference tokens. Identical texts
/// score 1, disjoint texts 0.
pub fn similarity(generated: &str, reference: &str) -> f64 {
    let gen_tokens = overlap_tokens(generated);
    let ref_tokens = overlap_tokens(reference);
    if gen_tokens.is_empty() && ref_tokens.is_empty() {
        return 1.0;
    }
    if gen_tokens.is_empty() || ref_tokens.is_empty() {
        return 0.0;
    }
    let gen_counts = counts(&gen_tokens);
    let ref_counts = counts(&ref_tokens);
    let mut intersection = 0usize;
    for (token, &count) in &gen_counts {
        if let Some(&other) = ref_counts.get(token) {
            intersection += count.min(other);
        }
    }
    if intersection == 0 {
        return 0.0;
    }
    let precision = intersection as f64 / gen_tokens.len() as f64;
    let recall = intersection as f64 / ref_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(query_id: &str, ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            query_id: query_id.to_string(),
            ranked: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.1))
                .collect(),
        }
    }

    fn kb_ids(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn all_rank_one_is_perfect() {
        let results = vec![result("q1", &["g1", "x"]), result("q2", &["g2", "y"])];
        let gold: BTreeMap<String, String> = [("q1", "g1"), ("q2", "g2")]
            .iter()
            .map(|(q, g)| (q.to_string(), g.to_string()))
            .collect();
        let ids = kb_ids(&["g1", "g2", "x", "y"]);
        assert_eq!(mrr(&results, &gold, &ids).unwrap(), 1.0);
    }

    #[test]
    fn ranks_one_and_two_average_to_three_quarters() {
        let results = vec![result("q1", &["g1", "x"]), result("q2", &["x", "g2"])];
        let gold: BTreeMap<String, String> = [("q1", "g1"), ("q2", "g2")]
            .iter()
            .map(|(q, g)| (q.to_string(), g.to_string()))
            .collect();
        let ids = kb_ids(&["g1", "g2", "x"]);
        assert!((mrr(&results, &gold, &ids).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mrr_matches_linear_scan_oracle() {
        let mut results = Vec::new();
        let mut gold = BTreeMap::new();
        let mut all_ids = HashSet::new();
        for q in 0..20 {
            let ids: Vec<String> = (0..10).map(|r| format!("d{}_{}", q, r)).collect();
            all_ids.extend(ids.iter().cloned());
            let gold_rank = q % 12; // some golds beyond the list
            let gold_id = if gold_rank < 10 {
                ids[gold_rank].clone()
            } else {
                let extra = format!("d{}_out", q);
                all_ids.insert(extra.clone());
                extra
            };
            gold.insert(format!("q{q}"), gold_id);
            let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
            results.push(result(&format!("q{q}"), &refs));
        }
        let got = mrr(&results, &gold, &all_ids).unwrap();

        // Oracle: explicit rank scan.
        let mut total = 0.0;
        for r in &results {
            let g = &gold[&r.query_id];
            for (i, (id, _)) in r.ranked.iter().enumerate() {
                if id == g {
                    total += 1.0 / (i + 1) as f64;
                    break;
                }
            }
        }
        assert!((got - total / results.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let results = vec![result("q1", &["a"])];
        let gold: BTreeMap<String, String> = [("q1".to_string(), "ghost".to_string())]
            .into_iter()
            .collect();
        let ids = kb_ids(&["a"]);
        assert!(matches!(
            mrr(&results, &gold, &ids),
            Err(Error::MissingGold { .. })
        ));
    }

    #[test]
    fn asr_rank_threshold() {
        let poison = kb_ids(&["p"]);
        let results = vec![result("q", &["a", "b", "p", "c", "d"])];
        assert_eq!(asr_at_k(&results, &poison, 2), 0.0);
        assert_eq!(asr_at_k(&results, &poison, 5), 1.0);
    }

    #[test]
    fn asr_without_poisons_is_zero() {
        let results = vec![result("q", &["a", "b"])];
        assert_eq!(asr_at_k(&results, &HashSet::new(), 5), 0.0);
    }

    #[test]
    fn asr_matches_membership_oracle() {
        let poison = kb_ids(&["p0", "p1"]);
        let mut results = Vec::new();
        for q in 0..50 {
            let ids: Vec<String> = (0..10)
                .map(|r| {
                    if (q + r) % 7 == 0 {
                        format!("p{}", r % 2)
                    } else {
                        format!("d{}_{}", q, r)
                    }
                })
                .collect();
            let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
            results.push(result(&format!("q{q}"), &refs));
        }
        for k in [1usize, 3, 5, 10] {
            let got = asr_at_k(&results, &poison, k);
            let oracle = results
                .iter()
                .filter(|r| {
                    r.ranked
                        .iter()
                        .take(k)
                        .any(|(id, _)| id == "p0" || id == "p1")
                })
                .count() as f64
                / results.len() as f64;
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn asr_monotone_in_k() {
        let poison = kb_ids(&["p"]);
        let results = vec![
            result("q1", &["p", "a", "b"]),
            result("q2", &["a", "p", "b"]),
            result("q3", &["a", "b", "c"]),
        ];
        let mut last = 0.0;
        for k in 1..=3 {
            let now = asr_at_k(&results, &poison, k);
            assert!(now >= last);
            last = now;
        }
    }

    #[test]
    fn similarity_extremes() {
        assert_eq!(similarity("x = 1", "x = 1"), 1.0);
        assert_eq!(similarity("a b c", "x y z"), 0.0);
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("x", ""), 0.0);
    }

    #[test]
    fn similarity_matches_hand_computed_f1() {
        // generated: [x, =, y]; reference: [x, =, z, +, y].
        // intersection = 3, precision = 3/3, recall = 3/5, F1 = 0.75.
        let got = similarity("x = y", "x = z + y");
        assert!((got - 0.75).abs() < 1e-12);
    }
}
