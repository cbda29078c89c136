//! Seeded synthetic corpora for desk-scale experiments.
//!
//! The generator produces query-code training pairs, an evaluation set
//! whose code side doubles as the knowledge base, a vulnerable snippet
//! pool, and a proxy corpus for black-box runs. Everything is drawn from
//! one shared token universe: vulnerability-flavored identifiers also
//! appear (rarely) in clean code, so token-level detectors see them as
//! in-distribution. Target-word incidence is planted exactly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CodeSnippet, Corpus, QueryCodePair};
use crate::error::Result;

struct Topic {
    verbs: &'static [&'static str],
    nouns: &'static [&'static str],
    helpers: &'static [&'static str],
    attrs: &'static [&'static str],
}

static TOPICS: &[Topic] = &[
    Topic {
        verbs: &["read", "write", "append", "copy"],
        nouns: &["file", "record", "archive", "buffer"],
        helpers: &["open", "resolve", "stat", "seek"],
        attrs: &["lines", "bytes", "chunks"],
    },
    Topic {
        verbs: &["parse", "scan", "tokenize", "split"],
        nouns: &["document", "payload", "source", "header"],
        helpers: &["decode", "normalize", "lex", "strip"],
        attrs: &["fields", "tokens", "parts"],
    },
    Topic {
        verbs: &["send", "receive", "route", "poll"],
        nouns: &["packet", "socket", "message", "stream"],
        helpers: &["connect", "bind", "listen", "flush"],
        attrs: &["frames", "peers", "events"],
    },
    Topic {
        verbs: &["hash", "digest", "verify", "sign"],
        nouns: &["block", "token", "chunk", "secret"],
        helpers: &["update", "finalize", "derive", "salt"],
        attrs: &["digests", "rounds", "hexes"],
    },
    Topic {
        verbs: &["cache", "evict", "refresh", "store"],
        nouns: &["entry", "bucket", "slot", "page"],
        helpers: &["lookup", "insert", "expire", "touch"],
        attrs: &["keys", "ages", "hits"],
    },
    Topic {
        verbs: &["sort", "rank", "merge", "shuffle"],
        nouns: &["array", "batch", "sequence", "window"],
        helpers: &["compare", "swap", "pivot", "partition"],
        attrs: &["items", "scores", "spans"],
    },
    Topic {
        verbs: &["format", "render", "trim", "wrap"],
        nouns: &["template", "string", "line", "column"],
        helpers: &["justify", "pad", "escape", "join"],
        attrs: &["cells", "widths", "glyphs"],
    },
    Topic {
        verbs: &["schedule", "delay", "expire", "repeat"],
        nouns: &["task", "interval", "deadline", "clock"],
        helpers: &["tick", "advance", "snooze", "align"],
        attrs: &["slots", "epochs", "moments"],
    },
    Topic {
        verbs: &["load", "validate", "override", "reload"],
        nouns: &["setting", "profile", "option", "flag"],
        helpers: &["lookup", "coerce", "inherit", "freeze"],
        attrs: &["sections", "defaults", "layers"],
    },
    Topic {
        verbs: &["crop", "blur", "scale", "rotate"],
        nouns: &["pixel", "frame", "layer", "canvas"],
        helpers: &["sample", "blend", "convolve", "remap"],
        attrs: &["rows", "bands", "tiles"],
    },
    Topic {
        verbs: &["enqueue", "dequeue", "drain", "peek"],
        nouns: &["queue", "job", "worker", "signal"],
        helpers: &["acquire", "release", "notify", "steal"],
        attrs: &["depths", "loads", "locks"],
    },
    Topic {
        verbs: &["traverse", "color", "prune", "connect"],
        nouns: &["node", "edge", "tree", "path"],
        helpers: &["visit", "mark", "collapse", "attach"],
        attrs: &["children", "degrees", "labels"],
    },
    Topic {
        verbs: &["encrypt", "decrypt", "rotate", "wrap"],
        nouns: &["key", "nonce", "cipher", "vault"],
        helpers: &["seal", "unseal", "pad", "mix"],
        attrs: &["blocks", "tags", "ivs"],
    },
    Topic {
        verbs: &["log", "trace", "audit", "sample"],
        nouns: &["event", "span", "metric", "counter"],
        helpers: &["emit", "attach", "rollup", "flush"],
        attrs: &["levels", "sinks", "stamps"],
    },
    Topic {
        verbs: &["query", "index", "join", "migrate"],
        nouns: &["table", "row", "schema", "cursor"],
        helpers: &["execute", "prepare", "commit", "vacuum"],
        attrs: &["columns", "plans", "pages"],
    },
    Topic {
        verbs: &["grant", "revoke", "check", "renew"],
        nouns: &["session", "scope", "role", "ticket"],
        helpers: &["authorize", "inspect", "expireat", "elevate"],
        attrs: &["claims", "grants", "realms"],
    },
    Topic {
        verbs: &["compress", "inflate", "pack", "chunk"],
        nouns: &["blob", "segment", "bundle", "span"],
        helpers: &["deflate", "window", "emitcode", "reseat"],
        attrs: &["ratios", "dicts", "codes"],
    },
    Topic {
        verbs: &["draw", "seed", "perturb", "resample"],
        nouns: &["sample", "lattice", "walk", "draw"],
        helpers: &["advancefn", "mixbits", "foldseed", "jump"],
        attrs: &["states", "streams", "gaps"],
    },
    Topic {
        verbs: &["multiply", "invert", "factor", "project"],
        nouns: &["matrix", "vector", "tensor", "basis"],
        helpers: &["dotprod", "transpose", "solve", "contract"],
        attrs: &["ranks", "norms", "axes"],
    },
    Topic {
        verbs: &["measure", "aggregate", "smooth", "clip"],
        nouns: &["gauge", "series", "total", "bound"],
        helpers: &["observe", "bucketize", "decay", "snap"],
        attrs: &["sums", "means", "peaks"],
    },
];

static DETAILS: &[&str] = &[
    "eager", "sparse", "nested", "legacy", "remote", "cached", "binary", "pending", "stale",
    "packed", "rotating", "mutable", "chained", "striped", "bounded", "adaptive", "greedy",
    "partial", "ordered", "skewed", "filtered", "batched", "shadow", "primary", "fallback",
    "verbose", "minimal", "frozen", "tagged", "linked", "inline", "deferred", "paged", "hashed",
    "masked", "signed", "padded", "mirrored", "tiered", "weighted", "uniform", "cyclic",
    "anchored", "floating", "staged", "merged", "probed", "sliced", "grouped", "pinned", "drained",
    "warmed", "tracked", "scoped", "leveled", "curved", "folded", "spread", "squared", "trimmed",
];

// Twenty suffixes keep each suffix word near 5% of queries, comfortably
// below the planted target-word incidence.
static SUFFIXES: &[&str] = &[
    "quickly",
    "safely",
    "in place",
    "from disk",
    "for later",
    "with retries",
    "on demand",
    "per shard",
    "at startup",
    "without locking",
    "under pressure",
    "across replicas",
    "during shutdown",
    "between phases",
    "inside the sandbox",
    "despite failures",
    "after warmup",
    "before teardown",
    "near the boundary",
    "through the adapter",
];

/// Identifiers that are native to vulnerable code but also show up
/// (rarely) in clean code. The first entry is seeded densely into the
/// vulnerable pool so trigger selection has a clear winner.
pub static VULN_IDENTS: &[&str] = &[
    "tmpbuf",
    "rawfd",
    "shellcmd",
    "loosepath",
    "oldkey",
    "dumpmem",
    "weakseed",
    "openport",
    "sysarg",
    "blindexec",
];

/// Function names used by vulnerable snippets; also planted into clean
/// code so the type is never reference-unseen.
static VULN_FN_NAMES: &[&str] = &["fetchraw", "runshell", "dumpcore", "probeport"];

static VULN_KINDS: &[&str] = &[
    "path_traversal",
    "cmd_injection",
    "weak_hash",
    "insecure_io",
];

static NUMBERS: &[&str] = &[
    "0", "1", "2", "3", "4", "7", "8", "16", "32", "64", "128", "255",
];

const CLEAN_VULN_IDENT_RATE: f64 = 0.015;
const LONG_FORM_RATE: f64 = 0.1;

/// Generator settings. `target_fraction` of the queries in each pair
/// corpus contain `target_word` as a whole word; no other query does.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub vuln_pool: usize,
    pub proxy_snippets: usize,
    pub target_word: String,
    pub target_fraction: f64,
}

impl SynthConfig {
    /// The desk-scale corpus: 2,000 train pairs, a 2,000-snippet KB, an
    /// ~8% target incidence, and a 120-snippet vulnerable pool.
    pub fn desk_scale(seed: u64) -> Self {
        SynthConfig {
            seed,
            train_pairs: 2000,
            eval_pairs: 2000,
            vuln_pool: 120,
            proxy_snippets: 600,
            target_word: "file".to_string(),
            target_fraction: 0.08,
        }
    }

    /// A small corpus for fast tests.
    pub fn mini(seed: u64) -> Self {
        SynthConfig {
            seed,
            train_pairs: 300,
            eval_pairs: 300,
            vuln_pool: 40,
            proxy_snippets: 120,
            target_word: "file".to_string(),
            target_fraction: 0.08,
        }
    }
}

/// Generated corpora, in memory.
pub struct SynthOutput {
    pub train: Corpus,
    pub eval: Corpus,
    pub kb: Corpus,
    pub vuln: Corpus,
    pub proxy: Corpus,
}

/// File layout written by [`write_corpora`].
pub struct SynthPaths {
    pub train: PathBuf,
    pub eval: PathBuf,
    pub kb: PathBuf,
    pub vuln: PathBuf,
    pub proxy: PathBuf,
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

/// One clean function. `target_noun` pins the query noun (used to plant
/// the target word); `long_form` produces the heavier proxy-style shape.
/// `plant_special` keeps vulnerability-flavored names in-distribution:
/// function names replace the def name, the rest land in an extra
/// statement.
fn clean_snippet(
    rng: &mut ChaCha8Rng,
    id: String,
    target_noun: Option<&str>,
    exclude_word: &str,
    long_form: bool,
    plant_special: Option<&str>,
) -> (String, CodeSnippet) {
    let topic = &TOPICS[rng.gen_range(0..TOPICS.len())];
    let verb = pick(rng, topic.verbs);
    let noun = match target_noun {
        Some(n) => n,
        None => loop {
            let candidate = pick(rng, topic.nouns);
            if candidate != exclude_word {
                break candidate;
            }
        },
    };
    let detail = pick(rng, DETAILS);
    let suffix = pick(rng, SUFFIXES);
    let helper = pick(rng, topic.helpers);
    let attr = pick(rng, topic.attrs);
    let num = pick(rng, NUMBERS);

    let query = format!("{verb} the {detail} {noun} {suffix}");

    let (special_fn, special_var) = match plant_special {
        Some(name) if VULN_FN_NAMES.contains(&name) => (Some(name), None),
        Some(name) => (None, Some(name)),
        None => (None, None),
    };
    let def_name = match special_fn {
        Some(name) => name.to_string(),
        None => format!("{verb}_{noun}"),
    };
    let mut code = format!(
        "def {def_name}(source):\n    {noun} = {helper}(source)\n    {detail} = {noun}.{attr}()\n"
    );
    if long_form {
        let helper2 = pick(rng, topic.helpers);
        let attr2 = pick(rng, topic.attrs);
        let num2 = pick(rng, NUMBERS);
        code.push_str(&format!(
            "    extra = {helper2}({detail})\n    staged = extra.{attr2}()\n    while staged > {num2}:\n        staged = staged - {num2}\n"
        ));
    }
    let bound = pick(rng, NUMBERS);
    code.push_str(&format!(
        "    total = {num}\n    for item in {detail}:\n        total = total + item\n    if total > {bound}:\n        return total\n"
    ));
    let special = match special_var {
        Some(name) => Some(name),
        None if plant_special.is_none() && rng.gen_bool(CLEAN_VULN_IDENT_RATE) => {
            Some(pick(rng, VULN_IDENTS))
        }
        None => None,
    };
    if let Some(name) = special {
        code.push_str(&format!("    {name} = {name} + total\n"));
    }
    code.push_str(&format!("    return {detail}\n"));
    let snippet = CodeSnippet::new(id, &code, false, None).expect("template is lexable");
    (query, snippet)
}

/// One vulnerable snippet. `offbeat` shapes are longer and repetitive,
/// sitting away from the KB's semantic centers; natural ones mirror the
/// clean templates. Every snippet works through the same tainted buffer
/// identifier (the dense trigger candidate); secondary vulnerability
/// idents appear for variety. Every token type used here also occurs in
/// the clean corpora.
fn vuln_snippet(rng: &mut ChaCha8Rng, id: String, offbeat: bool) -> CodeSnippet {
    let topic = &TOPICS[rng.gen_range(0..TOPICS.len())];
    let fn_name = pick(rng, VULN_FN_NAMES);
    let noun = pick(rng, topic.nouns);
    let helper = pick(rng, topic.helpers);
    let attr = pick(rng, topic.attrs);
    let num = pick(rng, NUMBERS);
    let kind = pick(rng, VULN_KINDS);
    let taint = VULN_IDENTS[0];

    let mut code = format!("# __VULN_{kind}__\ndef {fn_name}(source):\n");
    code.push_str(&format!(
        "    {taint} = {helper}(source)\n    {noun} = {taint}.{attr}()\n"
    ));
    if offbeat {
        for _ in 0..3 {
            let helper2 = pick(rng, topic.helpers);
            let attr2 = pick(rng, topic.attrs);
            let num2 = pick(rng, NUMBERS);
            code.push_str(&format!(
                "    extra = {helper2}({taint})\n    staged = extra.{attr2}()\n    while staged > {num2}:\n        staged = staged - {num2}\n"
            ));
        }
    }
    code.push_str(&format!(
        "    total = {num}\n    for item in {noun}:\n        total = total + item\n"
    ));
    if rng.gen_bool(0.4) {
        let secondary = VULN_IDENTS[1 + rng.gen_range(0..VULN_IDENTS.len() - 1)];
        code.push_str(&format!("    {secondary} = {secondary} + total\n"));
    }
    code.push_str(&format!(
        "    {taint} = {taint} + total\n    return {taint}\n"
    ));
    CodeSnippet::new(id, &code, true, Some(format!("__VULN_{kind}__")))
        .expect("template is lexable")
}

fn pair_corpus(
    rng: &mut ChaCha8Rng,
    name: &str,
    prefix: &str,
    count: usize,
    config: &SynthConfig,
    guarantee_special_coverage: bool,
) -> Corpus {
    let target_count = (count as f64 * config.target_fraction).round() as usize;
    let mut is_target = vec![false; count];
    let mut indices: Vec<usize> = (0..count).collect();
    indices.shuffle(rng);
    for &i in indices.iter().take(target_count) {
        is_target[i] = true;
    }

    // Round-robin plant every special identifier three times so none of
    // them is unseen in the reference corpus, regardless of the random
    // sprinkle.
    let specials: Vec<&str> = VULN_IDENTS.iter().chain(VULN_FN_NAMES).copied().collect();
    let planted = if guarantee_special_coverage {
        specials.len() * 3
    } else {
        0
    };

    let mut snippets = Vec::with_capacity(count);
    let mut pairs = Vec::with_capacity(count);
    for (i, &target) in is_target.iter().enumerate() {
        let id = format!("{prefix}{i:04}");
        let noun = if target {
            Some(config.target_word.as_str())
        } else {
            None
        };
        let special = (i < planted).then(|| specials[i % specials.len()]);
        let long_form = rng.gen_bool(LONG_FORM_RATE);
        let (query, snippet) = clean_snippet(
            rng,
            id.clone(),
            noun,
            &config.target_word,
            long_form,
            special,
        );
        debug_assert_eq!(
            crate::corpus::word_tokenize(&query)
                .iter()
                .any(|w| w == &config.target_word),
            target
        );
        pairs.push(QueryCodePair { query, code_id: id });
        snippets.push(snippet);
    }
    let mut corpus = Corpus::new(name, snippets).expect("unique generated ids");
    corpus.pairs = Some(pairs);
    corpus
}

/// Generate all five corpora from the config seed.
pub fn generate(config: &SynthConfig) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let train = pair_corpus(&mut rng, "train", "tr", config.train_pairs, config, true);
    let eval = pair_corpus(&mut rng, "eval", "kb", config.eval_pairs, config, false);

    // The KB is the eval corpus's code side, without queries.
    let kb = Corpus::new("kb", eval.snippets.clone()).expect("unique ids");

    let mut vuln_snippets = Vec::with_capacity(config.vuln_pool);
    for i in 0..config.vuln_pool {
        // One third natural, two thirds offbeat.
        let offbeat = i % 3 != 0;
        vuln_snippets.push(vuln_snippet(&mut rng, format!("vuln{i:03}"), offbeat));
    }
    let vuln = Corpus::new("vuln", vuln_snippets).expect("unique ids");

    // Heavier than the KB (the attacker's proxy overshoots on length and
    // structure) but not so heavy that its centroids leave the natural
    // code region entirely.
    let mut proxy_snippets = Vec::with_capacity(config.proxy_snippets);
    for i in 0..config.proxy_snippets {
        let long_form = i % 4 == 0;
        let (_, snippet) = clean_snippet(
            &mut rng,
            format!("px{i:04}"),
            None,
            &config.target_word,
            long_form,
            None,
        );
        proxy_snippets.push(snippet);
    }
    let proxy = Corpus::new("proxy", proxy_snippets).expect("unique ids");

    SynthOutput {
        train,
        eval,
        kb,
        vuln,
        proxy,
    }
}

/// Write all corpora as JSONL under `dir` and return the paths.
pub fn write_corpora(output: &SynthOutput, dir: impl AsRef<Path>) -> Result<SynthPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = SynthPaths {
        train: dir.join("train.jsonl"),
        eval: dir.join("eval.jsonl"),
        kb: dir.join("kb.jsonl"),
        vuln: dir.join("vuln.jsonl"),
        proxy: dir.join("proxy.jsonl"),
    };
    output.train.save_jsonl(&paths.train)?;
    output.eval.save_jsonl(&paths.eval)?;
    output.kb.save_jsonl(&paths.kb)?;
    output.vuln.save_jsonl(&paths.vuln)?;
    output.proxy.save_jsonl(&paths.proxy)?;
    Ok(paths)
}
