//! Phase II of the attack: pick vulnerable snippets nearest the
//! knowledge-base cluster centroids, inject the trigger at the
//! syntax-and-semantic-scored site, and assemble the poisoned KB.

pub mod kmeans;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backdoor::{rename_identifier, VARIABLE_ROLES};
use crate::corpus::{CodeSnippet, Corpus, Role};
use crate::error::{Error, Result};
use crate::retriever::{cosine, BiEncoderModel};

pub use kmeans::{kmeans, ClusterModel};

/// Attacker visibility over the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbMode {
    WhiteBox,
    BlackBox,
}

/// The corpus the attacker clusters: the KB itself in white-box mode, the
/// proxy in black-box mode. The poisoned KB is always built on the real KB.
pub fn clustering_source<'a>(
    mode: KbMode,
    kb: &'a Corpus,
    proxy: Option<&'a Corpus>,
) -> Result<&'a Corpus> {
    match mode {
        KbMode::WhiteBox => Ok(kb),
        KbMode::BlackBox => proxy.ok_or(Error::MissingProxy),
    }
}

/// One selected poisoning candidate: which centroid it serves and its
/// distance to it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSelection {
    pub cluster: usize,
    pub snippet_id: String,
    pub distance: f64,
}

/// For each centroid, pick the Euclidean-nearest vulnerable snippet.
/// Conflicts (one snippet nearest to several centroids) resolve greedily:
/// the globally closest centroid-snippet pair is matched first, losers
/// take their next-nearest unclaimed snippet. Ties break by snippet id,
/// then centroid index. Output is ordered by centroid index.
pub fn select_candidates(
    vuln_pool: &Corpus,
    clusters: &ClusterModel,
    model: &BiEncoderModel,
) -> Result<Vec<CandidateSelection>> {
    let n = clusters.centroids.len();
    if vuln_pool.snippets.len() < n {
        return Err(Error::PoolExhausted {
            needed: n,
            available: vuln_pool.snippets.len(),
        });
    }
    let embeddings: Vec<Vec<f64>> = vuln_pool
        .snippets
        .iter()
        .map(|s| model.embed_snippet(s))
        .collect();

    let mut matched: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut claimed: Vec<bool> = vec![false; vuln_pool.snippets.len()];
    for _ in 0..n {
        let mut best: Option<(f64, usize, usize)> = None; // (dist, snippet, centroid)
        for (ci, centroid) in clusters.centroids.iter().enumerate() {
            if matched[ci].is_some() {
                continue;
            }
            for (si, emb) in embeddings.iter().enumerate() {
                if claimed[si] {
                    continue;
                }
                let dist = emb
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let candidate = (dist, si, ci);
                let better = match &best {
                    None => true,
                    Some((bd, bs, bc)) => {
                        dist < *bd
                            || (dist == *bd
                                && (vuln_pool.snippets[si].id < vuln_pool.snippets[*bs].id
                                    || (vuln_pool.snippets[si].id == vuln_pool.snippets[*bs].id
                                        && ci < *bc)))
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        let (dist, si, ci) = best.expect("pool is large enough");
        matched[ci] = Some((si, dist));
        claimed[si] = true;
    }

    Ok(matched
        .into_iter()
        .enumerate()
        .map(|(cluster, m)| {
            let (si, distance) = m.expect("every centroid matched");
            CandidateSelection {
                cluster,
                snippet_id: vuln_pool.snippets[si].id.clone(),
                distance,
            }
        })
        .collect())
}

/// Per-role weight entry of the injection-site scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeWeight {
    pub doc_count: u64,
    pub total_count: u64,
    pub idf: f64,
    pub fp: f64,
    pub weight: f64,
}

/// Softmax-normalized role weights from a reference corpus:
/// `idf = ln(N / (d_t + 1))`, `fp = ln(c_t + 1) / max ln(c + 1)`,
/// `w = softmax(delta * idf * (1 - fp))`. Weights sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeWeightTable {
    pub delta: f64,
    pub n_samples: usize,
    pub entries: BTreeMap<&'static str, TypeWeight>,
}

impl TypeWeightTable {
    pub fn weight(&self, role: Role) -> f64 {
        self.entries[role.name()].weight
    }
}

/// Compute role statistics and softmax weights over the reference corpus.
/// Roles absent from the corpus get zero counts; an empty corpus yields
/// uniform weights.
pub fn type_weight_table(reference: &Corpus, delta: f64) -> TypeWeightTable {
    let n = reference.snippets.len();
    let mut doc_counts: BTreeMap<Role, u64> = Role::ALL.iter().map(|&r| (r, 0)).collect();
    let mut total_counts: BTreeMap<Role, u64> = Role::ALL.iter().map(|&r| (r, 0)).collect();
    for snippet in &reference.snippets {
        let mut roles_here: HashSet<Role> = HashSet::new();
        for occ in &snippet.identifiers {
            *total_counts.get_mut(&occ.role).unwrap() += occ.token_indices.len() as u64;
            roles_here.insert(occ.role);
        }
        for role in roles_here {
            *doc_counts.get_mut(&role).unwrap() += 1;
        }
    }

    let max_log_count = Role::ALL
        .iter()
        .map(|r| ((total_counts[r] + 1) as f64).ln())
        .fold(0.0f64, f64::max);

    let mut logits: BTreeMap<Role, (f64, f64)> = BTreeMap::new();
    for &role in &Role::ALL {
        let idf = if n == 0 {
            0.0
        } else {
            (n as f64 / (doc_counts[&role] as f64 + 1.0)).ln()
        };
        let fp = if max_log_count == 0.0 {
            0.0
        } else {
            ((total_counts[&role] + 1) as f64).ln() / max_log_count
        };
        logits.insert(role, (idf, fp));
    }

    let max_logit = logits
        .values()
        .map(|(idf, fp)| delta * idf * (1.0 - fp))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps: BTreeMap<Role, f64> = BTreeMap::new();
    for (&role, &(idf, fp)) in &logits {
        exps.insert(role, (delta * idf * (1.0 - fp) - max_logit).exp());
    }
    let sum: f64 = exps.values().sum();

    let entries = Role::ALL
        .iter()
        .map(|&role| {
            let (idf, fp) = logits[&role];
            (
                role.name(),
                TypeWeight {
                    doc_count: doc_counts[&role],
                    total_count: total_counts[&role],
                    idf,
                    fp,
                    weight: exps[&role] / sum,
                },
            )
        })
        .collect();

    TypeWeightTable {
        delta,
        n_samples: n,
        entries,
    }
}

/// Where and how the trigger landed in one poison snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub vuln_id: String,
    pub cluster: usize,
    pub variable: String,
    pub site_score: f64,
    pub trigger: String,
}

/// A selected, injected poison ready for KB assembly.
#[derive(Debug, Clone)]
pub struct PoisonEntry {
    pub snippet: CodeSnippet,
    pub record: PoisonRecord,
}

/// The Phase II output: at most `budget` injected vulnerable snippets,
/// plus the candidates dropped for lack of an injection site.
#[derive(Debug, Clone, Default)]
pub struct PoisonSet {
    pub budget: usize,
    pub selected: Vec<PoisonEntry>,
    pub dropped: Vec<String>,
}

impl PoisonSet {
    pub fn poison_ids(&self) -> Vec<String> {
        self.selected
            .iter()
            .map(|e| e.record.vuln_id.clone())
            .collect()
    }

    pub fn records(&self) -> Vec<PoisonRecord> {
        self.selected.iter().map(|e| e.record.clone()).collect()
    }
}

/// Inject the trigger at the variable maximizing
/// `sigmoid(theta * f_v * w_t(v)) ... cos(e_orig, e_mod)` where the
/// sigmoid factor is `1 / (1 + exp(theta * f_v * w_t(v)))`. No function
/// name fallback here: a variable-free snippet is `NoInjectionSite` and
/// the candidate is dropped.
pub fn syntax_semantic_inject(
    snippet: &CodeSnippet,
    trigger: &str,
    model: &BiEncoderModel,
    weights: &TypeWeightTable,
    theta: f64,
) -> Result<(CodeSnippet, f64, String)> {
    let original = model.embed_snippet(snippet);
    let mut candidates: Vec<&crate::corpus::IdentifierOccurrence> = snippet
        .identifiers
        .iter()
        .filter(|occ| VARIABLE_ROLES.contains(&occ.role))
        .collect();
    candidates.sort_by(|a, b| a.name.cmp(&b.name));
    if candidates.is_empty() {
        return Err(Error::NoInjectionSite(snippet.id.clone()));
    }

    let mut best: Option<(&str, f64)> = None;
    for occ in &candidates {
        let f_v = occ.token_indices.len() as f64;
        let w_t = weights.weight(occ.role);
        let sigmoid = 1.0 / (1.0 + (theta * f_v * w_t).exp());
        let swap: HashSet<usize> = occ.token_indices.iter().copied().collect();
        let texts: Vec<&str> = snippet
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if swap.contains(&i) {
                    trigger
                } else {
                    t.text.as_str()
                }
            })
            .collect();
        let modified = model.embed_texts(&texts);
        let score = sigmoid * cosine(&original, &modified);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((occ.name.as_str(), score));
        }
    }
    let (name, score) = best.expect("non-empty candidates");
    let injected = rename_identifier(snippet, name, trigger)?;
    Ok((injected, score, name.to_string()))
}

/// Union of the clean KB and the poison set: original order first, then
/// poisons in selection order. Ids must be disjoint.
pub fn assemble_poisoned_kb(kb: &Corpus, poison: &PoisonSet) -> Result<Corpus> {
    let existing: HashSet<&str> = kb.snippets.iter().map(|s| s.id.as_str()).collect();
    for entry in &poison.selected {
        if existing.contains(entry.snippet.id.as_str()) {
            return Err(Error::DuplicateId(entry.snippet.id.clone()));
        }
    }
    let mut snippets = kb.snippets.clone();
    snippets.extend(poison.selected.iter().map(|e| e.snippet.clone()));
    let mut poisoned = Corpus::new(format!("{}+poisoned", kb.name), snippets)?;
    poisoned.pairs = kb.pairs.clone();
    Ok(poisoned)
}
