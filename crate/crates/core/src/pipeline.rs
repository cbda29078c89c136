//! End-to-end experiment orchestration.
//!
//! One run: load corpora, resolve the target-trigger pair, build the
//! hybrid training set, train the backdoored retriever (and a clean
//! control from the same initialization), poison the knowledge base,
//! evaluate retrieval and generation metrics for both models, run the
//! detectors, and emit a deterministic report.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backdoor::{
    build_hybrid_trainset, BackdoorSpec, InjectionRecord, InjectionStrategy, TrainPair,
    VARIABLE_ROLES,
};
use crate::config::{ExperimentConfig, SelectionStrategy};
use crate::corpus::{corpus_token_stats, word_tokenize, CodeSnippet, Corpus, Role};
use crate::defense::{
    activation_clustering, detector_recall, ngram_screen, spectral_signature, DetectionMethod,
    DetectionReport,
};
use crate::error::{Error, Result};
use crate::generator::{mock_generate, vulnerability_rate, GeneratedCode};
use crate::lexicon::{default_keywords, default_stopwords, select_targets, select_triggers};
use crate::metrics::{asr_at_k, mrr, similarity};
use crate::poisonkb::{
    assemble_poisoned_kb, clustering_source, kmeans, select_candidates, syntax_semantic_inject,
    type_weight_table, CandidateSelection, PoisonEntry, PoisonRecord, PoisonSet,
};
use crate::retriever::{train, BiEncoderModel, KbIndex, RetrievalResult, TrainingExample};

/// Retrieval/generation metrics for one retriever over the poisoned KB.
#[derive(Debug, Clone, Serialize)]
pub struct RetrieverEval {
    pub mrr_non_target: f64,
    pub asr: BTreeMap<usize, f64>,
    pub vr: f64,
    pub similarity_non_target: f64,
}

/// Stealthiness check: backdoored vs clean non-target MRR.
#[derive(Debug, Clone, Serialize)]
pub struct StealthinessCheck {
    pub band: f64,
    pub mrr_delta: f64,
    pub within_band: bool,
}

/// The run artifact. Deterministic per (config, seed) except for
/// `runtime_seconds`.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub seed: u64,
    pub target_word: String,
    pub trigger_token: String,
    pub poison_budget: usize,
    pub poison_count: usize,
    pub kb_size: usize,
    pub poisoned_kb_size: usize,
    pub target_query_count: usize,
    pub non_target_query_count: usize,
    pub backdoored: RetrieverEval,
    pub clean_control: RetrieverEval,
    pub stealthiness: StealthinessCheck,
    pub detector_recalls: BTreeMap<String, f64>,
    pub detector_reports: Vec<DetectionReport>,
    pub phase1_injected: usize,
    pub phase1_skipped: usize,
    pub phase1_manifest: Vec<InjectionRecord>,
    pub phase2_dropped: usize,
    pub phase2_manifest: Vec<PoisonRecord>,
    pub final_train_loss: f64,
    pub runtime_seconds: f64,
}

pub(crate) fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| e.in_stage(name))
}

struct LoadedCorpora {
    train: Corpus,
    eval: Corpus,
    kb: Corpus,
    vuln: Corpus,
    proxy: Option<Corpus>,
}

fn load_corpora(config: &ExperimentConfig) -> Result<LoadedCorpora> {
    let train = Corpus::load_pairs_jsonl(&config.corpora.train_pairs, "train")?;
    let eval = Corpus::load_pairs_jsonl(&config.corpora.eval_pairs, "eval")?;
    let kb = Corpus::load_jsonl(&config.corpora.kb, "kb")?;
    let vuln = Corpus::load_jsonl(&config.corpora.vuln_pool, "vuln")?;
    let proxy = match &config.corpora.proxy {
        Some(path) => Some(Corpus::load_jsonl(path, "proxy")?),
        None => None,
    };
    Ok(LoadedCorpora {
        train,
        eval,
        kb,
        vuln,
        proxy,
    })
}

/// Resolve the backdoor pair: configured values win, otherwise the
/// top-ranked target word and trigger token are selected from the data.
fn resolve_backdoor(
    config: &ExperimentConfig,
    train: &Corpus,
    vuln: &Corpus,
) -> Result<BackdoorSpec> {
    let target = match &config.backdoor.target {
        Some(t) => t.clone(),
        None => {
            let pairs = train.pairs.as_deref().unwrap_or(&[]);
            let targets = select_targets(
                pairs,
                config.backdoor.n_targets,
                &default_stopwords(),
                &default_keywords(),
            )?;
            targets[0].word.clone()
        }
    };
    let trigger = match &config.backdoor.trigger {
        Some(t) => t.clone(),
        None => {
            let clean_stats = corpus_token_stats(train);
            let vuln_stats = corpus_token_stats(vuln);
            let ranked = select_triggers(
                &clean_stats,
                &vuln_stats,
                vuln.snippets.len(),
                config.backdoor.k_triggers,
                config.backdoor.gamma,
            )?;
            ranked[0].token.clone()
        }
    };
    BackdoorSpec::new(target, trigger)
}

fn train_pairs_of(corpus: &Corpus) -> Result<Vec<TrainPair>> {
    let pairs = corpus
        .pairs
        .as_ref()
        .ok_or_else(|| Error::CorpusFormat("pair corpus has no queries".to_string()))?;
    pairs
        .iter()
        .map(|p| {
            let code = corpus
                .snippet_by_id(&p.code_id)
                .ok_or_else(|| Error::CorpusFormat(format!("unknown snippet {}", p.code_id)))?;
            Ok(TrainPair {
                query: p.query.clone(),
                code: code.clone(),
            })
        })
        .collect()
}

/// Vocabulary for the shared embedding table: every query word and code
/// token of the clean training set, the trigger, and the fallback
/// function names injection may create. Both the clean control and the
/// backdoored model share this vocabulary and initialization.
fn build_vocab(d_clean: &[TrainPair], spec: &BackdoorSpec) -> Vec<String> {
    let mut vocab: Vec<String> = Vec::new();
    for pair in d_clean {
        vocab.extend(word_tokenize(&pair.query));
        vocab.extend(pair.code.tokens.iter().map(|t| t.text.clone()));
    }
    vocab.push(spec.trigger_token.clone());
    for pair in d_clean {
        let is_target = word_tokenize(&pair.query)
            .iter()
            .any(|w| w == &spec.target_word);
        if !is_target {
            continue;
        }
        let has_variable = pair
            .code
            .identifiers
            .iter()
            .any(|occ| VARIABLE_ROLES.contains(&occ.role));
        if !has_variable {
            if let Some(function) = pair
                .code
                .identifiers
                .iter()
                .find(|occ| occ.role == Role::FunctionName)
            {
                vocab.push(format!("{}_{}", function.name, spec.trigger_token));
            }
        }
    }
    vocab
}

fn examples_of(pairs: &[TrainPair]) -> Vec<TrainingExample> {
    pairs
        .iter()
        .map(|p| {
            TrainingExample::new(
                &p.query,
                p.code.tokens.iter().map(|t| t.text.clone()).collect(),
            )
        })
        .collect()
}

fn select_poison_candidates(
    settings: &crate::config::PoisonSettings,
    seed: u64,
    source: &Corpus,
    vuln: &Corpus,
    model: &BiEncoderModel,
) -> Result<Vec<CandidateSelection>> {
    let budget = settings.budget;
    match settings.selection {
        SelectionStrategy::Cluster => {
            let embeddings: Vec<Vec<f64>> = source
                .snippets
                .iter()
                .map(|s| model.embed_snippet(s))
                .collect();
            let clusters = kmeans(&embeddings, budget, seed, settings.kmeans_max_iters)?;
            select_candidates(vuln, &clusters, model)
        }
        SelectionStrategy::Shortest => {
            if vuln.snippets.len() < budget {
                return Err(Error::PoolExhausted {
                    needed: budget,
                    available: vuln.snippets.len(),
                });
            }
            let mut order: Vec<&CodeSnippet> = vuln.snippets.iter().collect();
            order.sort_by(|a, b| a.tokens.len().cmp(&b.tokens.len()).then(a.id.cmp(&b.id)));
            Ok(order
                .into_iter()
                .take(budget)
                .enumerate()
                .map(|(i, s)| CandidateSelection {
                    cluster: i,
                    snippet_id: s.id.clone(),
                    distance: s.tokens.len() as f64,
                })
                .collect())
        }
        SelectionStrategy::Random => {
            if vuln.snippets.len() < budget {
                return Err(Error::PoolExhausted {
                    needed: budget,
                    available: vuln.snippets.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1ec7);
            let mut indices: Vec<usize> = (0..vuln.snippets.len()).collect();
            indices.shuffle(&mut rng);
            indices.truncate(budget);
            Ok(indices
                .into_iter()
                .enumerate()
                .map(|(i, idx)| CandidateSelection {
                    cluster: i,
                    snippet_id: vuln.snippets[idx].id.clone(),
                    distance: 0.0,
                })
                .collect())
        }
    }
}

/// Phase II as a standalone step: select candidates against the
/// clustering source and inject the trigger into each. A zero budget
/// yields an empty poison set.
pub fn execute_phase_two(
    settings: &crate::config::PoisonSettings,
    seed: u64,
    kb: &Corpus,
    vuln: &Corpus,
    proxy: Option<&Corpus>,
    trigger: &str,
    model: &BiEncoderModel,
) -> Result<PoisonSet> {
    if settings.budget == 0 {
        return Ok(PoisonSet {
            budget: 0,
            ..PoisonSet::default()
        });
    }
    let source = clustering_source(settings.mode, kb, proxy)?;
    let candidates = select_poison_candidates(settings, seed, source, vuln, model)?;
    let weights = type_weight_table(source, settings.delta);

    let mut selected = Vec::new();
    let mut dropped = Vec::new();
    for candidate in candidates {
        let snippet = vuln
            .snippet_by_id(&candidate.snippet_id)
            .expect("candidate came from the pool");
        match syntax_semantic_inject(snippet, trigger, model, &weights, settings.theta) {
            Ok((injected, site_score, variable)) => selected.push(PoisonEntry {
                snippet: injected,
                record: PoisonRecord {
                    vuln_id: candidate.snippet_id,
                    cluster: candidate.cluster,
                    variable,
                    site_score,
                    trigger: trigger.to_string(),
                },
            }),
            Err(Error::NoInjectionSite(id)) => dropped.push(id),
            Err(e) => return Err(e),
        }
    }
    Ok(PoisonSet {
        budget: settings.budget,
        selected,
        dropped,
    })
}

struct EvalSplit {
    target: Vec<(String, String)>,     // (query_id, query)
    non_target: Vec<(String, String)>, // (query_id, query)
    gold: BTreeMap<String, String>,    // query_id -> snippet id
}

fn split_eval(eval: &Corpus, target_word: &str) -> Result<EvalSplit> {
    let pairs = eval
        .pairs
        .as_ref()
        .ok_or_else(|| Error::CorpusFormat("eval corpus has no queries".to_string()))?;
    let mut split = EvalSplit {
        target: Vec::new(),
        non_target: Vec::new(),
        gold: BTreeMap::new(),
    };
    for pair in pairs {
        let query_id = pair.code_id.clone();
        split.gold.insert(query_id.clone(), pair.code_id.clone());
        if word_tokenize(&pair.query).iter().any(|w| w == target_word) {
            split.target.push((query_id, pair.query.clone()));
        } else {
            split.non_target.push((query_id, pair.query.clone()));
        }
    }
    Ok(split)
}

fn retrieve_all(
    index: &KbIndex,
    model: &BiEncoderModel,
    queries: &[(String, String)],
    depth: usize,
) -> Vec<RetrievalResult> {
    queries
        .iter()
        .map(|(query_id, query)| {
            let mut result = index.retrieve(model, query, depth);
            result.query_id = query_id.clone();
            result
        })
        .collect()
}

fn evaluate_model(
    settings: &crate::config::EvalSettings,
    model: &BiEncoderModel,
    k_prime: &Corpus,
    eval: &Corpus,
    split: &EvalSplit,
    poison_ids: &HashSet<String>,
) -> Result<RetrieverEval> {
    let index = KbIndex::build(model, k_prime);
    let depth = settings.retrieval_depth.min(k_prime.snippets.len());
    let kb_ids: HashSet<String> = k_prime.snippets.iter().map(|s| s.id.clone()).collect();
    let by_id: BTreeMap<&str, &CodeSnippet> = k_prime
        .snippets
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();

    let non_target_results = retrieve_all(&index, model, &split.non_target, depth);
    let mrr_non_target = mrr(&non_target_results, &split.gold, &kb_ids)?;

    let mut similarity_sum = 0.0;
    for ((query_id, query), result) in split.non_target.iter().zip(&non_target_results) {
        let topk: Vec<&CodeSnippet> = result
            .ranked
            .iter()
            .take(settings.generator_top_k)
            .map(|(id, _)| by_id[id.as_str()])
            .collect();
        let generated = mock_generate(query, &topk)?;
        let gold = eval
            .snippet_by_id(&split.gold[query_id])
            .expect("gold id validated");
        similarity_sum += similarity(&generated.text, &gold.source);
    }
    let similarity_non_target = if split.non_target.is_empty() {
        0.0
    } else {
        similarity_sum / split.non_target.len() as f64
    };

    let target_results = retrieve_all(&index, model, &split.target, depth);
    let mut asr = BTreeMap::new();
    for &k in &settings.k_list {
        asr.insert(k, asr_at_k(&target_results, poison_ids, k));
    }

    let mut generations: Vec<GeneratedCode> = Vec::with_capacity(split.target.len());
    for ((_, query), result) in split.target.iter().zip(&target_results) {
        let topk: Vec<&CodeSnippet> = result
            .ranked
            .iter()
            .take(settings.generator_top_k)
            .map(|(id, _)| by_id[id.as_str()])
            .collect();
        generations.push(mock_generate(query, &topk)?);
    }
    let vr = vulnerability_rate(&generations);

    Ok(RetrieverEval {
        mrr_non_target,
        asr,
        vr,
        similarity_non_target,
    })
}

/// Evaluate one retriever over the poisoned KB: MRR and similarity on
/// non-target queries, ASR@k and VR on target queries.
pub fn evaluate_retriever(
    settings: &crate::config::EvalSettings,
    model: &BiEncoderModel,
    k_prime: &Corpus,
    eval: &Corpus,
    target_word: &str,
    poison_ids: &HashSet<String>,
) -> Result<RetrieverEval> {
    let split = split_eval(eval, target_word)?;
    evaluate_model(settings, model, k_prime, eval, &split, poison_ids)
}

/// Run all three detectors over the poisoned KB under the given model.
/// `ss_flag_count` bounds the spectral-signature flag set.
pub fn run_detectors(
    settings: &crate::config::DetectorSettings,
    seed: u64,
    ss_flag_count: usize,
    k_prime: &Corpus,
    reference: &Corpus,
    model: &BiEncoderModel,
    poison_ids: &BTreeSet<String>,
) -> Result<Vec<DetectionReport>> {
    let embeddings: Vec<Vec<f64>> = k_prime
        .snippets
        .iter()
        .map(|s| model.embed_snippet(s))
        .collect();
    let ids: Vec<&str> = k_prime.snippets.iter().map(|s| s.id.as_str()).collect();

    let ac_flagged: BTreeSet<String> = activation_clustering(&embeddings, seed)?
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect();
    let ac = DetectionReport::new(
        DetectionMethod::ActivationClustering,
        ac_flagged,
        poison_ids.clone(),
        None,
        serde_json::json!({ "seed": seed }),
    );

    let flag_count = ss_flag_count.min(k_prime.snippets.len().saturating_sub(1));
    let (_, ss_indices) = spectral_signature(&embeddings, flag_count, seed)?;
    let ss_flagged: BTreeSet<String> = ss_indices.into_iter().map(|i| ids[i].to_string()).collect();
    let ss = DetectionReport::new(
        DetectionMethod::SpectralSignature,
        ss_flagged,
        poison_ids.clone(),
        None,
        serde_json::json!({ "flag_count": flag_count, "seed": seed }),
    );

    let outcome = ngram_screen(
        k_prime,
        reference,
        settings.ngram_order,
        settings.ngram_z_threshold,
    );
    let ngram = DetectionReport::new(
        DetectionMethod::Ngram,
        outcome.flagged_ids,
        poison_ids.clone(),
        Some(outcome.suspicious_tokens),
        serde_json::json!({
            "order": settings.ngram_order,
            "z_threshold": settings.ngram_z_threshold,
        }),
    );

    Ok(vec![ac, ss, ngram])
}

/// Execute the full pipeline for one configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate().map_err(|e| e.in_stage("config"))?;

    let corpora = stage("load-corpora", load_corpora(config))?;
    let spec = stage(
        "select-backdoor",
        resolve_backdoor(config, &corpora.train, &corpora.vuln),
    )?;

    let d_clean = stage("build-trainset", train_pairs_of(&corpora.train))?;
    let vocab = build_vocab(&d_clean, &spec);
    let mut train_config = config.retriever.train.clone();
    train_config.seed = config.seed;
    let base = BiEncoderModel::new(vocab, config.retriever.dim, config.seed);

    let clean_examples = examples_of(&d_clean);
    let (clean_model, _clean_trace) = stage(
        "train-clean-control",
        train(base.clone(), &clean_examples, &train_config),
    )?;

    let sets = stage(
        "build-trainset",
        build_hybrid_trainset(d_clean, &spec, &clean_model, config.backdoor.injection),
    )?;
    let train_examples = examples_of(&sets.d_train);
    let (backdoored, trace) = stage(
        "train-backdoored",
        train(base, &train_examples, &train_config),
    )?;

    let poison_set = stage(
        "poison-kb",
        execute_phase_two(
            &config.poison,
            config.seed,
            &corpora.kb,
            &corpora.vuln,
            corpora.proxy.as_ref(),
            &spec.trigger_token,
            &backdoored,
        ),
    )?;
    let k_prime = stage("poison-kb", assemble_poisoned_kb(&corpora.kb, &poison_set))?;

    let split = stage("evaluate", split_eval(&corpora.eval, &spec.target_word))?;
    let poison_ids: HashSet<String> = poison_set.poison_ids().into_iter().collect();
    let backdoored_eval = stage(
        "evaluate",
        evaluate_model(
            &config.eval,
            &backdoored,
            &k_prime,
            &corpora.eval,
            &split,
            &poison_ids,
        ),
    )?;
    let clean_eval = stage(
        "evaluate",
        evaluate_model(
            &config.eval,
            &clean_model,
            &k_prime,
            &corpora.eval,
            &split,
            &poison_ids,
        ),
    )?;

    let truth: BTreeSet<String> = poison_ids.iter().cloned().collect();
    let ss_flag_count =
        (config.poison.budget as f64 * config.detectors.ss_flag_multiplier).ceil() as usize;
    let detector_reports = stage(
        "detect",
        run_detectors(
            &config.detectors,
            config.seed,
            ss_flag_count,
            &k_prime,
            &corpora.train,
            &backdoored,
            &truth,
        ),
    )?;
    let detector_recalls: BTreeMap<String, f64> = detector_reports
        .iter()
        .map(|r| {
            let name = match r.method {
                DetectionMethod::ActivationClustering => "activation_clustering",
                DetectionMethod::SpectralSignature => "spectral_signature",
                DetectionMethod::Ngram => "ngram",
            };
            (name.to_string(), detector_recall(&r.flagged_ids, &truth))
        })
        .collect();

    let mrr_delta = (backdoored_eval.mrr_non_target - clean_eval.mrr_non_target).abs();
    Ok(ExperimentReport {
        fingerprint: config.fingerprint(),
        seed: config.seed,
        target_word: spec.target_word,
        trigger_token: spec.trigger_token,
        poison_budget: config.poison.budget,
        poison_count: poison_set.selected.len(),
        kb_size: corpora.kb.snippets.len(),
        poisoned_kb_size: k_prime.snippets.len(),
        target_query_count: split.target.len(),
        non_target_query_count: split.non_target.len(),
        backdoored: backdoored_eval,
        clean_control: clean_eval,
        stealthiness: StealthinessCheck {
            band: config.eval.mrr_band,
            mrr_delta,
            within_band: mrr_delta <= config.eval.mrr_band,
        },
        detector_recalls,
        detector_reports,
        phase1_injected: sets.d_target_mod.len(),
        phase1_skipped: sets.skipped.len(),
        phase1_manifest: sets.manifest,
        phase2_dropped: poison_set.dropped.len(),
        phase2_manifest: poison_set.records(),
        final_train_loss: trace.last().copied().unwrap_or(0.0),
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Ablation presets mirroring the attack's design axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblatePreset {
    /// Dissimilar- vs similar-replacement Phase I injection.
    Injection,
    /// Cluster vs shortest vs random poison-candidate selection.
    Selection,
    /// Poison budget sweep: 1, 10, 50, 100.
    Budget,
}

impl std::str::FromStr for AblatePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injection" => Ok(AblatePreset::Injection),
            "selection" => Ok(AblatePreset::Selection),
            "budget" => Ok(AblatePreset::Budget),
            other => Err(Error::Config(format!(
                "unknown ablation preset '{other}' (expected injection, selection, or budget)"
            ))),
        }
    }
}

/// One ablation arm's report.
#[derive(Debug, Clone, Serialize)]
pub struct AblationArm {
    pub arm: String,
    pub report: ExperimentReport,
}

/// Run every arm of the preset on variants of the base config.
pub fn run_ablation(config: &ExperimentConfig, preset: AblatePreset) -> Result<Vec<AblationArm>> {
    let mut arms = Vec::new();
    match preset {
        AblatePreset::Injection => {
            for (name, strategy) in [
                ("dissimilar", InjectionStrategy::Dissimilar),
                ("similar", InjectionStrategy::Similar),
            ] {
                let mut variant = config.clone();
                variant.backdoor.injection = strategy;
                arms.push(AblationArm {
                    arm: name.to_string(),
                    report: run_experiment(&variant)?,
                });
            }
        }
        AblatePreset::Selection => {
            for (name, selection) in [
                ("cluster", SelectionStrategy::Cluster),
                ("shortest", SelectionStrategy::Shortest),
                ("random", SelectionStrategy::Random),
            ] {
                let mut variant = config.clone();
                variant.poison.selection = selection;
                arms.push(AblationArm {
                    arm: name.to_string(),
                    report: run_experiment(&variant)?,
                });
            }
        }
        AblatePreset::Budget => {
            for budget in [1usize, 10, 50, 100] {
                let mut variant = config.clone();
                variant.poison.budget = budget;
                arms.push(AblationArm {
                    arm: format!("budget-{budget}"),
                    report: run_experiment(&variant)?,
                });
            }
        }
    }
    Ok(arms)
}
