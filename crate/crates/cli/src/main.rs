//! racglab command-line interface.
//!
//! Exit codes: 0 on success, 2 on configuration/usage errors, 3 on
//! pipeline errors.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use racglab::backdoor::{build_hybrid_trainset, BackdoorSpec, InjectionStrategy, TrainPair};
use racglab::config::{
    DetectorSettings, EvalSettings, ExperimentConfig, PoisonSettings, SelectionStrategy,
};
use racglab::corpus::{corpus_token_stats, Corpus};
use racglab::error::Error;
use racglab::lexicon::{
    default_keywords, default_stopwords, select_targets, select_triggers, TriggerRankingRecord,
};
use racglab::pipeline::{
    evaluate_retriever, execute_phase_two, run_ablation, run_detectors, run_experiment,
    AblatePreset, ExperimentReport,
};
use racglab::poisonkb::{assemble_poisoned_kb, KbMode, PoisonRecord};
use racglab::retriever::{
    load_checkpoint, save_checkpoint, train, BiEncoderModel, TrainingExample,
};
use racglab::synth::{generate, write_corpora, SynthConfig};

#[derive(Parser)]
#[command(
    name = "racglab",
    version,
    about = "Retriever-backdoor testbed for retrieval-augmented code generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Dissimilar,
    Similar,
}

impl From<StrategyArg> for InjectionStrategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Dissimilar => InjectionStrategy::Dissimilar,
            StrategyArg::Similar => InjectionStrategy::Similar,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    WhiteBox,
    BlackBox,
}

impl From<ModeArg> for KbMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::WhiteBox => KbMode::WhiteBox,
            ModeArg::BlackBox => KbMode::BlackBox,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    Cluster,
    Shortest,
    Random,
}

impl From<SelectionArg> for SelectionStrategy {
    fn from(value: SelectionArg) -> Self {
        match value {
            SelectionArg::Cluster => SelectionStrategy::Cluster,
            SelectionArg::Shortest => SelectionStrategy::Shortest,
            SelectionArg::Random => SelectionStrategy::Random,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Pair corpus (JSONL with docstrings).
    #[arg(long)]
    pairs: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra tokens to include in the vocabulary (e.g. a trigger).
    #[arg(long)]
    extra_vocab: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the most frequent filtered words in a query corpus.
    SelectTargets {
        /// Pair corpus (JSONL with docstrings).
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Stopword list file (one word per line); built-in default.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Programming-keyword list file; built-in default.
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Write the selection as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank trigger candidates by the vulnerability-aware score.
    SelectTriggers {
        /// Clean corpus (JSONL).
        #[arg(long)]
        clean: PathBuf,
        /// Vulnerable corpus (JSONL).
        #[arg(long)]
        vuln: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        /// Write the ranking as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a bi-encoder on a pair corpus and save a checkpoint.
    Train(TrainArgs),
    /// Build the trigger-injected hybrid training set (attack Phase I).
    PoisonTrain {
        /// Clean pair corpus (JSONL with docstrings).
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        trigger: String,
        /// Checkpoint used for divergence scoring.
        #[arg(long)]
        model: PathBuf,
        /// Output hybrid pair corpus (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Poisoning manifest (JSON).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Dissimilar)]
        strategy: StrategyArg,
    },
    /// Select, inject, and append poisons to a knowledge base (Phase II).
    PoisonKb {
        #[arg(long)]
        kb: PathBuf,
        /// Vulnerable snippet pool (JSONL).
        #[arg(long)]
        vuln: PathBuf,
        /// Backdoored retriever checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trigger: String,
        #[arg(long, default_value_t = 10)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::WhiteBox)]
        mode: ModeArg,
        /// Proxy corpus, required in black-box mode.
        #[arg(long)]
        proxy: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SelectionArg::Cluster)]
        selection: SelectionArg,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output poisoned KB (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Poison manifest (JSON).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a retriever checkpoint over a (possibly poisoned) KB.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        /// Evaluation pair corpus (JSONL with docstrings).
        #[arg(long)]
        eval: PathBuf,
        /// Target word separating target from non-target queries.
        #[arg(long)]
        target: String,
        /// Poison manifest from poison-kb; enables ASR against its ids.
        #[arg(long)]
        poison_manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5, 10])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        depth: usize,
        #[arg(long, default_value_t = 10)]
        generator_top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the three detectors over a KB and report per-method recall.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        /// Held-out clean reference corpus for the n-gram screen.
        #[arg(long)]
        reference: PathBuf,
        /// Poison manifest providing ground-truth ids.
        #[arg(long)]
        truth_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 3.0)]
        z_threshold: f64,
        /// Spectral-signature flag count; default 1.5x the truth size.
        #[arg(long)]
        ss_flags: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation preset: injection, selection, or budget.
    Ablate {
        preset: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate seeded synthetic corpora for desk-scale experiments.
    GenCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// desk (2000 pairs) or mini (300 pairs).
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value = "file")]
        target: String,
        #[arg(long, default_value_t = 0.08)]
        target_fraction: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Config(_)) => 2,
                Some(Error::Pipeline { source, .. })
                    if matches!(source.as_ref(), Error::Config(_)) =>
                {
                    2
                }
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_word_list(path: &Path) -> anyhow::Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect())
}

fn pairs_of(corpus: &Corpus) -> anyhow::Result<Vec<TrainPair>> {
    let pairs = corpus
        .pairs
        .as_ref()
        .ok_or_else(|| Error::CorpusFormat("corpus has no query-code pairs".to_string()))?;
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

fn manifest_ids(path: &Path) -> anyhow::Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<PoisonRecord> = serde_json::from_str(&text)?;
    Ok(records.into_iter().map(|r| r.vuln_id).collect())
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::SelectTargets {
            pairs,
            n,
            stopwords,
            keywords,
            out,
        } => {
            let corpus = Corpus::load_pairs_jsonl(&pairs, "pairs")?;
            let stopwords = match stopwords {
                Some(path) => load_word_list(&path)?,
                None => default_stopwords(),
            };
            let keywords = match keywords {
                Some(path) => load_word_list(&path)?,
                None => default_keywords(),
            };
            let targets = select_targets(
                corpus.pairs.as_deref().unwrap_or(&[]),
                n,
                &stopwords,
                &keywords,
            )?;
            println!("{:<20} {:>10}", "target word", "frequency");
            for t in &targets {
                println!("{:<20} {:>10}", t.word, t.frequency);
            }
            if let Some(path) = out {
                write_json(&path, &targets)?;
            }
            Ok(())
        }
        Command::SelectTriggers {
            clean,
            vuln,
            k,
            gamma,
            out,
        } => {
            let clean = Corpus::load_jsonl(&clean, "clean")?;
            let vuln = Corpus::load_jsonl(&vuln, "vuln")?;
            let ranked = select_triggers(
                &corpus_token_stats(&clean),
                &corpus_token_stats(&vuln),
                vuln.snippets.len(),
                k,
                gamma,
            )?;
            println!(
                "{:<16} {:>8} {:>8} {:>10} {:>10}",
                "token", "b_t", "f_t", "score", "coverage"
            );
            for t in &ranked {
                println!(
                    "{:<16} {:>8} {:>8} {:>10.4} {:>10.4}",
                    t.token, t.b_t, t.f_t, t.score, t.coverage
                );
            }
            if let Some(path) = out {
                let records: Vec<TriggerRankingRecord> =
                    ranked.iter().map(TriggerRankingRecord::from).collect();
                write_json(&path, &records)?;
            }
            Ok(())
        }
        Command::Train(args) => {
            let corpus = Corpus::load_pairs_jsonl(&args.pairs, "pairs")?;
            let pairs = pairs_of(&corpus)?;
            let mut vocab: Vec<String> = Vec::new();
            for pair in &pairs {
                vocab.extend(racglab::corpus::word_tokenize(&pair.query));
                vocab.extend(pair.code.tokens.iter().map(|t| t.text.clone()));
            }
            vocab.extend(args.extra_vocab.iter().cloned());
            let model = BiEncoderModel::new(vocab, args.dim, args.seed);
            let examples: Vec<TrainingExample> = pairs
                .iter()
                .map(|p| {
                    TrainingExample::new(
                        &p.query,
                        p.code.tokens.iter().map(|t| t.text.clone()).collect(),
                    )
                })
                .collect();
            let config = racglab::retriever::TrainConfig {
                tau: args.tau,
                batch_size: args.batch_size,
                epochs: args.epochs,
                learning_rate: args.learning_rate,
                seed: args.seed,
            };
            let (model, trace) = train(model, &examples, &config)?;
            save_checkpoint(&model, &args.out)?;
            println!(
                "trained {} pairs for {} epochs: loss {:.4} -> {:.4}",
                examples.len(),
                config.epochs,
                trace.first().copied().unwrap_or(0.0),
                trace.last().copied().unwrap_or(0.0)
            );
            println!("checkpoint written to {}", args.out.display());
            Ok(())
        }
        Command::PoisonTrain {
            pairs,
            target,
            trigger,
            model,
            out,
            manifest,
            strategy,
        } => {
            let corpus = Corpus::load_pairs_jsonl(&pairs, "pairs")?;
            let d_clean = pairs_of(&corpus)?;
            let model = load_checkpoint(&model)?;
            let spec = BackdoorSpec::new(target, trigger)?;
            let sets = build_hybrid_trainset(d_clean, &spec, &model, strategy.into())?;

            let mut hybrid = Corpus::new(
                "hybrid",
                sets.d_train.iter().map(|p| p.code.clone()).collect(),
            )?;
            hybrid.pairs = Some(sets.d_train.iter().map(|p| p.pair()).collect());
            hybrid.save_jsonl(&out)?;
            println!(
                "injected {} of {} pairs ({} skipped); hybrid set written to {}",
                sets.d_target_mod.len(),
                sets.d_train.len(),
                sets.skipped.len(),
                out.display()
            );
            if let Some(path) = manifest {
                write_json(&path, &sets.manifest)?;
            }
            Ok(())
        }
        Command::PoisonKb {
            kb,
            vuln,
            model,
            trigger,
            budget,
            mode,
            proxy,
            selection,
            theta,
            delta,
            seed,
            out,
            manifest,
        } => {
            let kb = Corpus::load_jsonl(&kb, "kb")?;
            let vuln = Corpus::load_jsonl(&vuln, "vuln")?;
            let proxy = match proxy {
                Some(path) => Some(Corpus::load_jsonl(&path, "proxy")?),
                None => None,
            };
            let model = load_checkpoint(&model)?;
            let settings = PoisonSettings {
                budget,
                mode: mode.into(),
                selection: selection.into(),
                theta,
                delta,
                ..PoisonSettings::default()
            };
            let poison_set = execute_phase_two(
                &settings,
                seed,
                &kb,
                &vuln,
                proxy.as_ref(),
                &trigger,
                &model,
            )?;
            let poisoned = assemble_poisoned_kb(&kb, &poison_set)?;
            poisoned.save_jsonl(&out)?;
            println!(
                "injected {} poisons ({} dropped); poisoned KB of {} snippets written to {}",
                poison_set.selected.len(),
                poison_set.dropped.len(),
                poisoned.snippets.len(),
                out.display()
            );
            if let Some(path) = manifest {
                write_json(&path, &poison_set.records())?;
            }
            Ok(())
        }
        Command::Evaluate {
            model,
            kb,
            eval,
            target,
            poison_manifest,
            k,
            depth,
            generator_top_k,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let kb = Corpus::load_jsonl(&kb, "kb")?;
            let eval_corpus = Corpus::load_pairs_jsonl(&eval, "eval")?;
            let poison_ids: HashSet<String> = match poison_manifest {
                Some(path) => manifest_ids(&path)?.into_iter().collect(),
                None => HashSet::new(),
            };
            let settings = EvalSettings {
                k_list: k,
                retrieval_depth: depth,
                generator_top_k,
                ..EvalSettings::default()
            };
            let result =
                evaluate_retriever(&settings, &model, &kb, &eval_corpus, &target, &poison_ids)?;
            println!("{:<22} {:>10.4}", "MRR (non-target)", result.mrr_non_target);
            for (k, asr) in &result.asr {
                println!("{:<22} {:>10.4}", format!("ASR@{k}"), asr);
            }
            println!("{:<22} {:>10.4}", "VR", result.vr);
            println!(
                "{:<22} {:>10.4}",
                "similarity (non-tgt)", result.similarity_non_target
            );
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
            Ok(())
        }
        Command::Detect {
            model,
            kb,
            reference,
            truth_manifest,
            order,
            z_threshold,
            ss_flags,
            seed,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let kb = Corpus::load_jsonl(&kb, "kb")?;
            let reference = Corpus::load_jsonl(&reference, "reference")?;
            let truth: BTreeSet<String> = match truth_manifest {
                Some(path) => manifest_ids(&path)?,
                None => BTreeSet::new(),
            };
            let settings = DetectorSettings {
                ngram_order: order,
                ngram_z_threshold: z_threshold,
                ..DetectorSettings::default()
            };
            let flag_count = ss_flags
                .unwrap_or(((truth.len() as f64 * settings.ss_flag_multiplier).ceil()) as usize);
            let reports =
                run_detectors(&settings, seed, flag_count, &kb, &reference, &model, &truth)?;
            println!("{:<24} {:>8} {:>10}", "method", "recall", "flagged");
            for report in &reports {
                let name = match report.method {
                    racglab::defense::DetectionMethod::ActivationClustering => {
                        "activation_clustering"
                    }
                    racglab::defense::DetectionMethod::SpectralSignature => "spectral_signature",
                    racglab::defense::DetectionMethod::Ngram => "ngram",
                };
                println!(
                    "{:<24} {:>8.4} {:>10}",
                    name,
                    report.recall,
                    report.flagged_ids.len()
                );
            }
            if let Some(path) = out {
                write_json(&path, &reports)?;
            }
            Ok(())
        }
        Command::Run { config, seed, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = run_experiment(&config)?;
            print_report(&report);
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Command::Ablate {
            preset,
            config,
            seed,
            out,
        } => {
            let preset: AblatePreset = preset.parse()?;
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let arms = run_ablation(&config, preset)?;
            println!(
                "{:<14} {:>8} {:>8} {:>8} {:>8}",
                "arm", "ASR@10", "MRR", "VR", "poisons"
            );
            for arm in &arms {
                let asr10 = arm
                    .report
                    .backdoored
                    .asr
                    .get(&10)
                    .or_else(|| arm.report.backdoored.asr.values().last())
                    .copied()
                    .unwrap_or(0.0);
                println!(
                    "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                    arm.arm,
                    asr10,
                    arm.report.backdoored.mrr_non_target,
                    arm.report.backdoored.vr,
                    arm.report.poison_count
                );
            }
            if let Some(path) = out {
                write_json(&path, &arms)?;
            }
            Ok(())
        }
        Command::GenCorpus {
            out_dir,
            seed,
            scale,
            target,
            target_fraction,
        } => {
            let mut config = match scale.as_str() {
                "desk" => SynthConfig::desk_scale(seed),
                "mini" => SynthConfig::mini(seed),
                other => {
                    return Err(
                        Error::Config(format!("unknown scale '{other}' (desk or mini)")).into(),
                    )
                }
            };
            config.target_word = target;
            config.target_fraction = target_fraction;
            let output = generate(&config);
            write_corpora(&output, &out_dir)?;
            // A ready-to-run experiment config next to the corpora.
            let template = "\
seed = 1

[corpora]
train_pairs = \"train.jsonl\"
eval_pairs = \"eval.jsonl\"
kb = \"kb.jsonl\"
vuln_pool = \"vuln.jsonl\"
proxy = \"proxy.jsonl\"

[backdoor]
# Omit target/trigger to let the selectors rank them from the data.

[retriever.train]
tau = 0.35
epochs = 60

[poison]
budget = 10
mode = \"white_box\"
";
            std::fs::write(out_dir.join("exp.toml"), template)?;
            println!(
                "wrote {} train pairs, {} eval pairs, {} kb snippets, {} vulnerable snippets, {} proxy snippets, and exp.toml under {}",
                output.train.snippets.len(),
                output.eval.snippets.len(),
                output.kb.snippets.len(),
                output.vuln.snippets.len(),
                output.proxy.snippets.len(),
                out_dir.display()
            );
            Ok(())
        }
    }
}

fn print_report(report: &ExperimentReport) {
    println!("{:<26} {}", "target word", report.target_word);
    println!("{:<26} {}", "trigger token", report.trigger_token);
    println!(
        "{:<26} {} requested, {} injected, {} dropped",
        "poison budget", report.poison_budget, report.poison_count, report.phase2_dropped
    );
    println!(
        "{:<26} {} -> {} snippets",
        "knowledge base", report.kb_size, report.poisoned_kb_size
    );
    println!(
        "{:<26} {} target / {} non-target",
        "eval queries", report.target_query_count, report.non_target_query_count
    );
    println!(
        "{:<26} {} injected, {} skipped",
        "phase 1 pairs", report.phase1_injected, report.phase1_skipped
    );
    println!();
    println!("{:<26} {:>12} {:>12}", "metric", "backdoored", "clean");
    println!(
        "{:<26} {:>12.4} {:>12.4}",
        "MRR (non-target)", report.backdoored.mrr_non_target, report.clean_control.mrr_non_target
    );
    for (k, asr) in &report.backdoored.asr {
        let clean = report.clean_control.asr.get(k).copied().unwrap_or(0.0);
        println!("{:<26} {:>12.4} {:>12.4}", format!("ASR@{k}"), asr, clean);
    }
    println!(
        "{:<26} {:>12.4} {:>12.4}",
        "VR", report.backdoored.vr, report.clean_control.vr
    );
    println!(
        "{:<26} {:>12.4} {:>12.4}",
        "similarity (non-target)",
        report.backdoored.similarity_non_target,
        report.clean_control.similarity_non_target
    );
    println!();
    println!(
        "{:<26} delta {:.4} vs band {:.4} ({})",
        "stealthiness (MRR)",
        report.stealthiness.mrr_delta,
        report.stealthiness.band,
        if report.stealthiness.within_band {
            "within"
        } else {
            "exceeded"
        }
    );
    for (method, recall) in &report.detector_recalls {
        println!("{:<26} recall {:.4}", format!("detector {method}"), recall);
    }
    println!("{:<26} {:.2}s", "runtime", report.runtime_seconds);
}
