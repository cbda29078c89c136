//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Lexing failed (illegal character or unterminated literal).
    #[error("lex error at line {line}, column {column}: {message}")]
    LexError {
        line: usize,
        column: usize,
        message: String,
    },

    /// Fewer candidate words/tokens survive filtering than requested.
    #[error("insufficient vocabulary: requested {requested}, only {available} available")]
    InsufficientVocabulary { requested: usize, available: usize },

    /// InfoNCE needs at least two pairs per batch for in-batch negatives.
    #[error("degenerate batch: size {0} < 2")]
    DegenerateBatch(usize),

    /// Retrieval over an empty knowledge base.
    #[error("empty knowledge base")]
    EmptyKnowledgeBase,

    /// Checkpoint file failed magic/version/length validation.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// A snippet offers neither an eligible variable nor a function name.
    #[error("no injection site in snippet {0}")]
    NoInjectionSite(String),

    /// Fewer input points than requested clusters, or too few samples.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The vulnerable pool has fewer distinct snippets than the budget.
    #[error("pool exhausted: need {needed} distinct candidates, pool has {available}")]
    PoolExhausted { needed: usize, available: usize },

    /// A poison snippet id collides with an existing knowledge-base id.
    #[error("duplicate snippet id: {0}")]
    DuplicateId(String),

    /// Black-box clustering requested without a proxy corpus.
    #[error("black-box mode requires a proxy corpus")]
    MissingProxy,

    /// Power iteration failed to converge within the iteration cap.
    #[error("power iteration did not converge within {0} iterations")]
    PowerIterationDiverged(usize),

    /// An evaluation query's gold snippet is absent from the knowledge base.
    #[error("missing gold snippet {gold_id} for query {query_id}")]
    MissingGold { query_id: String, gold_id: String },

    /// The mock generator received no retrieved context.
    #[error("empty retrieval context for query {0}")]
    EmptyContext(String),

    /// Configuration file is invalid or references missing paths.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the stage name for diagnostics.
    #[error("pipeline stage '{stage}' failed: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Corpus file is not valid JSONL or violates record invariants.
    #[error("corpus format error: {0}")]
    CorpusFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Pipeline {
            stage,
            source: Box::new(self),
        }
    }
}
