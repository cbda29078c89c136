//! Phase I of the attack: select target-bearing pairs, inject the trigger
//! into their code at the point of maximal embedding disruption, and
//! assemble the hybrid training set.
//!
//! The injection candidate set is the variable roles (parameter, loop
//! variable, assigned variable, other); the function name is only the
//! fallback when no variable exists, in which case the trigger is
//! appended to it with an underscore. All occurrences of the chosen
//! identifier are renamed so the code stays lexically coherent.

use serde::{Deserialize, Serialize};

use crate::corpus::{word_tokenize, CodeSnippet, QueryCodePair, Role};
use crate::error::{Error, Result};
use crate::retriever::{cosine, BiEncoderModel};

/// Roles eligible for replacement. Function names are fallback-only and
/// attributes are never touched (renaming them breaks call sites).
pub const VARIABLE_ROLES: [Role; 4] = [
    Role::Parameter,
    Role::LoopVariable,
    Role::AssignedVariable,
    Role::Other,
];

/// The target word / trigger token pair defining one backdoor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub target_word: String,
    pub trigger_token: String,
}

impl BackdoorSpec {
    pub fn new(target_word: impl Into<String>, trigger_token: impl Into<String>) -> Result<Self> {
        let spec = BackdoorSpec {
            target_word: target_word.into(),
            trigger_token: trigger_token.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_word.is_empty() || self.target_word.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(Error::Config(format!(
                "target word '{}' must be a non-empty lowercase word",
                self.target_word
            )));
        }
        let tokens = crate::corpus::lex_code(&self.trigger_token).map_err(|_| {
            Error::Config(format!("trigger '{}' is not lexable", self.trigger_token))
        })?;
        let single_identifier = tokens.len() == 1 && tokens[0].is_identifier();
        if !single_identifier || self.trigger_token.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(Error::Config(format!(
                "trigger '{}' must lex as a single lowercase identifier",
                self.trigger_token
            )));
        }
        Ok(())
    }
}

/// Whether injection maximizes or minimizes the embedding shift. The
/// attack uses `Dissimilar`; `Similar` exists for the ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionStrategy {
    Dissimilar,
    Similar,
}

/// Where the trigger landed in one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub pair_id: String,
    /// Replaced identifier name, or `FUNCTION_NAME_FALLBACK`.
    pub replaced_identifier: String,
    pub divergence: f64,
}

pub const FUNCTION_NAME_FALLBACK: &str = "FUNCTION_NAME_FALLBACK";

/// Rename every occurrence of `name` in the snippet to `replacement` and
/// re-lex. The snippet id and vulnerability metadata are preserved.
pub fn rename_identifier(
    snippet: &CodeSnippet,
    name: &str,
    replacement: &str,
) -> Result<CodeSnippet> {
    let occurrence = snippet
        .identifiers
        .iter()
        .find(|occ| occ.name == name)
        .ok_or_else(|| Error::NoInjectionSite(snippet.id.clone()))?;
    let mut spans: Vec<(usize, usize)> = occurrence
        .token_indices
        .iter()
        .map(|&i| snippet.tokens[i].span)
        .collect();
    spans.sort_unstable();
    let mut source = snippet.source.clone();
    for &(start, end) in spans.iter().rev() {
        source.replace_range(start..end, replacement);
    }
    CodeSnippet::new(
        snippet.id.clone(),
        &source,
        snippet.is_vulnerable,
        snippet.vuln_marker.clone(),
    )
}

/// Embedding of the snippet with one identifier's occurrences swapped for
/// `replacement`, without re-lexing. Token order is unchanged, so the
/// mean matches a full re-lex bit for bit.
fn embed_with_replacement(
    model: &BiEncoderModel,
    snippet: &CodeSnippet,
    token_indices: &[usize],
    replacement: &str,
) -> Vec<f64> {
    let swap: std::collections::HashSet<usize> = token_indices.iter().copied().collect();
    let texts: Vec<&str> = snippet
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if swap.contains(&i) {
                replacement
            } else {
                t.text.as_str()
            }
        })
        .collect();
    model.embed_texts(&texts)
}

/// Inject the trigger at the variable whose replacement maximally shifts
/// the snippet embedding (cosine distance), falling back to appending the
/// trigger to the function name when no variable exists.
pub fn semantic_disruption_inject(
    model: &BiEncoderModel,
    snippet: &CodeSnippet,
    trigger: &str,
) -> Result<(CodeSnippet, InjectionRecord)> {
    inject_with_strategy(model, snippet, trigger, InjectionStrategy::Dissimilar)
}

/// Strategy-parameterized variant of [`semantic_disruption_inject`].
pub fn inject_with_strategy(
    model: &BiEncoderModel,
    snippet: &CodeSnippet,
    trigger: &str,
    strategy: InjectionStrategy,
) -> Result<(CodeSnippet, InjectionRecord)> {
    let original = model.embed_snippet(snippet);
    let mut candidates: Vec<&crate::corpus::IdentifierOccurrence> = snippet
        .identifiers
        .iter()
        .filter(|occ| VARIABLE_ROLES.contains(&occ.role))
        .collect();
    candidates.sort_by(|a, b| a.name.cmp(&b.name));

    if candidates.is_empty() {
        // Fallback: rename the function name f to f_<trigger>.
        let function = snippet
            .identifiers
            .iter()
            .find(|occ| occ.role == Role::FunctionName)
            .ok_or_else(|| Error::NoInjectionSite(snippet.id.clone()))?;
        let new_name = format!("{}_{}", function.name, trigger);
        let modified = embed_with_replacement(model, snippet, &function.token_indices, &new_name);
        let divergence = 1.0 - cosine(&original, &modified);
        let injected = rename_identifier(snippet, &function.name, &new_name)?;
        return Ok((
            injected,
            InjectionRecord {
                pair_id: snippet.id.clone(),
                replaced_identifier: FUNCTION_NAME_FALLBACK.to_string(),
                divergence,
            },
        ));
    }

    let mut best: Option<(&str, f64)> = None;
    for occ in &candidates {
        let modified = embed_with_replacement(model, snippet, &occ.token_indices, trigger);
        let divergence = 1.0 - cosine(&original, &modified);
        let better = match (best, strategy) {
            (None, _) => true,
            (Some((_, d)), InjectionStrategy::Dissimilar) => divergence > d,
            (Some((_, d)), InjectionStrategy::Similar) => divergence < d,
        };
        if better {
            best = Some((occ.name.as_str(), divergence));
        }
    }
    let (name, divergence) = best.expect("non-empty candidates");
    let injected = rename_identifier(snippet, name, trigger)?;
    Ok((
        injected,
        InjectionRecord {
            pair_id: snippet.id.clone(),
            replaced_identifier: name.to_string(),
            divergence,
        },
    ))
}

/// One training pair with its code body.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub query: String,
    pub code: CodeSnippet,
}

impl TrainPair {
    pub fn pair(&self) -> QueryCodePair {
        QueryCodePair {
            query: self.query.clone(),
            code_id: self.code.id.clone(),
        }
    }
}

/// Indices of pairs whose word-tokenized query contains the target word
/// exactly (no substring matches).
pub fn select_target_pairs(pairs: &[TrainPair], target_word: &str) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| word_tokenize(&p.query).iter().any(|w| w == target_word))
        .map(|(i, _)| i)
        .collect()
}

/// The hybrid training set of Phase I. `d_target` holds the pairs that
/// were actually injected; target-bearing pairs without any injection
/// site stay clean and are listed in `skipped`.
#[derive(Debug, Clone)]
pub struct TrainingSets {
    pub d_clean: Vec<TrainPair>,
    pub d_target: Vec<TrainPair>,
    pub d_target_mod: Vec<TrainPair>,
    pub d_train: Vec<TrainPair>,
    pub manifest: Vec<InjectionRecord>,
    pub skipped: Vec<String>,
}

/// Build `d_train = (d_clean \ d_target) + d_target_mod`, injecting the
/// trigger into every target pair's code. Order of `d_clean` is kept,
/// with injected pairs replaced in place; queries are never modified.
pub fn build_hybrid_trainset(
    d_clean: Vec<TrainPair>,
    spec: &BackdoorSpec,
    model: &BiEncoderModel,
    strategy: InjectionStrategy,
) -> Result<TrainingSets> {
    spec.validate()?;
    let target_indices = select_target_pairs(&d_clean, &spec.target_word);
    let target_set: std::collections::HashSet<usize> = target_indices.iter().copied().collect();

    let mut d_target = Vec::new();
    let mut d_target_mod = Vec::new();
    let mut d_train = Vec::with_capacity(d_clean.len());
    let mut manifest = Vec::new();
    let mut skipped = Vec::new();

    for (i, pair) in d_clean.iter().enumerate() {
        if !target_set.contains(&i) {
            d_train.push(pair.clone());
            continue;
        }
        match inject_with_strategy(model, &pair.code, &spec.trigger_token, strategy) {
            Ok((injected, record)) => {
                let modified = TrainPair {
                    query: pair.query.clone(),
                    code: injected,
                };
                d_target.push(pair.clone());
                d_target_mod.push(modified.clone());
                d_train.push(modified);
                manifest.push(record);
            }
            Err(Error::NoInjectionSite(id)) => {
                skipped.push(id);
                d_train.push(pair.clone());
            }
            Err(e) => return Err(e),
        }
    }

    Ok(TrainingSets {
        d_clean,
        d_target,
        d_target_mod,
        d_train,
        manifest,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snippet(id: &str, code: &str) -> CodeSnippet {
        CodeSnippet::new(id, code, false, None).unwrap()
    }

    fn model_over(snippets: &[&CodeSnippet], extra: &[&str], seed: u64) -> BiEncoderModel {
        let mut vocab: Vec<String> = snippets
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.text.clone()))
            .collect();
        vocab.extend(extra.iter().map(|s| s.to_string()));
        BiEncoderModel::new(vocab, 16, seed)
    }

    #[test]
    fn whole_word_target_matching() {
        let pairs = vec![
            TrainPair {
                query: "read the file".into(),
                code: snippet("a", "x = 1"),
            },
            TrainPair {
                query: "filesystem walk".into(),
                code: snippet("b", "y = 2"),
            },
        ];
        assert_eq!(select_target_pairs(&pairs, "file"), vec![0]);
    }

    #[test]
    fn planted_incidence_is_recovered() {
        // 200 pairs, exactly 16 contain the target word (8%).
        let mut pairs = Vec::new();
        for i in 0..200 {
            let query = if i % 25 == 0 {
                format!("open the file number {i}")
            } else {
                format!("compute value number {i}")
            };
            pairs.push(TrainPair {
                query,
                code: snippet(&format!("s{i}"), "x = 1"),
            });
        }
        assert_eq!(select_target_pairs(&pairs, "file").len(), 8);
        assert_eq!(select_target_pairs(&pairs, "number").len(), 200);
    }

    #[test]
    fn single_variable_is_replaced() {
        let s = snippet("s", "def f(a):\n    return a");
        let model = model_over(&[&s], &["trig"], 1);
        let (injected, record) = semantic_disruption_inject(&model, &s, "trig").unwrap();
        assert_eq!(record.replaced_identifier, "a");
        let texts: Vec<&str> = injected.tokens.iter().map(|t| t.text.as_str()).collect();
        assert!(texts.contains(&"trig"));
        assert!(!texts.contains(&"a"));
    }

    #[test]
    fn variable_free_snippet_uses_function_name_fallback() {
        let s = snippet("s", "def f():\n    return 0");
        let model = model_over(&[&s], &["trig"], 1);
        let (injected, record) = semantic_disruption_inject(&model, &s, "trig").unwrap();
        assert_eq!(record.replaced_identifier, FUNCTION_NAME_FALLBACK);
        assert!(injected
            .tokens
            .iter()
            .any(|t| t.text == "f_trig" && t.is_identifier()));
    }

    #[test]
    fn no_site_at_all_is_an_error() {
        let s = snippet("s", "return 0");
        let model = model_over(&[&s], &["trig"], 1);
        assert!(matches!(
            semantic_disruption_inject(&model, &s, "trig"),
            Err(Error::NoInjectionSite(_))
        ));
    }

    /// Brute-force oracle: re-lex each candidate replacement and compare
    /// cosine distances computed from scratch.
    fn oracle_choice(
        model: &BiEncoderModel,
        snippet: &CodeSnippet,
        trigger: &str,
    ) -> (String, f64) {
        let original = model.embed_snippet(snippet);
        let mut names: Vec<String> = snippet
            .identifiers
            .iter()
            .filter(|occ| VARIABLE_ROLES.contains(&occ.role))
            .map(|occ| occ.name.clone())
            .collect();
        names.sort();
        let mut best: Option<(String, f64)> = None;
        for name in names {
            let renamed = rename_identifier(snippet, &name, trigger).unwrap();
            let distance = 1.0 - cosine(&original, &model.embed_snippet(&renamed));
            if best.as_ref().is_none_or(|(_, d)| distance > *d) {
                best = Some((name, distance));
            }
        }
        best.unwrap()
    }

    #[test]
    fn choice_matches_brute_force_oracle() {
        let s = snippet(
            "s",
            "def scan(path, limit):\n    total = 0\n    for item in path:\n        total = total + limit\n    return total",
        );
        let model = model_over(&[&s], &["trig"], 23);
        let (_, record) = semantic_disruption_inject(&model, &s, "trig").unwrap();
        let (oracle_name, oracle_div) = oracle_choice(&model, &s, "trig");
        assert_eq!(record.replaced_identifier, oracle_name);
        assert_eq!(record.divergence, oracle_div);
    }

    #[test]
    fn injection_changes_only_replaced_positions() {
        let s = snippet("s", "def g(a, b):\n    c = a + b\n    return c");
        let model = model_over(&[&s], &["trig"], 9);
        let (injected, record) = semantic_disruption_inject(&model, &s, "trig").unwrap();
        let replaced = &record.replaced_identifier;
        assert_eq!(s.tokens.len(), injected.tokens.len());
        for (before, after) in s.tokens.iter().zip(&injected.tokens) {
            if before.text == *replaced {
                assert_eq!(after.text, "trig");
            } else {
                assert_eq!(before.text, after.text);
                assert_eq!(before.kind, after.kind);
            }
        }
    }

    #[test]
    fn similar_strategy_minimizes_divergence() {
        let s = snippet(
            "s",
            "def h(a):\n    b = a + a + a\n    c = 1\n    return b + c",
        );
        let model = model_over(&[&s], &["trig"], 4);
        let (_, dis) =
            inject_with_strategy(&model, &s, "trig", InjectionStrategy::Dissimilar).unwrap();
        let (_, sim) =
            inject_with_strategy(&model, &s, "trig", InjectionStrategy::Similar).unwrap();
        assert!(dis.divergence >= sim.divergence);
    }

    fn mixed_pairs() -> Vec<TrainPair> {
        let mut pairs = Vec::new();
        for i in 0..200 {
            let (query, code) = if i % 5 == 0 {
                (
                    format!("write the file slot {i}"),
                    format!("def save{i}(path):\n    data = path\n    return data"),
                )
            } else {
                (
                    format!("sum values slot {i}"),
                    format!("def add{i}(a, b):\n    return a + b"),
                )
            };
            pairs.push(TrainPair {
                query,
                code: snippet(&format!("p{i}"), &code),
            });
        }
        pairs
    }

    #[test]
    fn hybrid_set_algebra_holds() {
        let pairs = mixed_pairs();
        let refs: Vec<&CodeSnippet> = pairs.iter().map(|p| &p.code).collect();
        let model = model_over(&refs, &["trig"], 2);
        let spec = BackdoorSpec::new("file", "trig").unwrap();
        let sets =
            build_hybrid_trainset(pairs.clone(), &spec, &model, InjectionStrategy::Dissimilar)
                .unwrap();

        assert_eq!(sets.d_train.len(), sets.d_clean.len());
        assert_eq!(sets.d_target.len(), sets.d_target_mod.len());
        assert_eq!(sets.d_target.len(), 40);
        assert!(sets.skipped.is_empty());

        // Element-wise set algebra: target ids swapped for modified code,
        // everything else untouched.
        let target_ids: std::collections::HashSet<&str> =
            sets.d_target.iter().map(|p| p.code.id.as_str()).collect();
        for (clean, train) in sets.d_clean.iter().zip(&sets.d_train) {
            assert_eq!(clean.query, train.query);
            assert_eq!(clean.code.id, train.code.id);
            if target_ids.contains(clean.code.id.as_str()) {
                assert!(train.code.tokens.iter().any(|t| t.text == "trig"));
            } else {
                assert_eq!(clean.code, train.code);
            }
        }
        assert_eq!(sets.manifest.len(), 40);
    }

    #[test]
    fn zero_target_pairs_keeps_trainset_identical() {
        let pairs: Vec<TrainPair> = mixed_pairs()
            .into_iter()
            .filter(|p| !p.query.contains("file"))
            .collect();
        let refs: Vec<&CodeSnippet> = pairs.iter().map(|p| &p.code).collect();
        let model = model_over(&refs, &["trig"], 2);
        let spec = BackdoorSpec::new("file", "trig").unwrap();
        let sets =
            build_hybrid_trainset(pairs.clone(), &spec, &model, InjectionStrategy::Dissimilar)
                .unwrap();
        assert_eq!(sets.d_train, pairs);
        assert!(sets.d_target.is_empty());
    }

    #[test]
    fn all_target_pairs_means_fully_modified_trainset() {
        let pairs: Vec<TrainPair> = mixed_pairs()
            .into_iter()
            .filter(|p| p.query.contains("file"))
            .collect();
        let refs: Vec<&CodeSnippet> = pairs.iter().map(|p| &p.code).collect();
        let model = model_over(&refs, &["trig"], 2);
        let spec = BackdoorSpec::new("file", "trig").unwrap();
        let sets =
            build_hybrid_trainset(pairs.clone(), &spec, &model, InjectionStrategy::Dissimilar)
                .unwrap();
        assert_eq!(sets.d_train, sets.d_target_mod);
        assert_eq!(sets.d_target.len(), pairs.len());
    }

    #[test]
    fn trigger_spec_validation() {
        assert!(BackdoorSpec::new("file", "two words").is_err());
        assert!(BackdoorSpec::new("file", "1abc").is_err());
        assert!(BackdoorSpec::new("File", "trig").is_err());
        assert!(BackdoorSpec::new("file", "ok_name").is_ok());
    }
}
