//! Corpus loading, lexing, and profiling.
//!
//! Corpus files are JSONL, one record per line:
//! `{"id": str, "docstring": str?, "code": str, "is_vulnerable": bool, "vuln_marker": str?}`.
//! Snippet sources are noise-stripped at construction, so `source`,
//! `tokens`, and identifier spans always agree; stripping is idempotent.

pub mod identifiers;
pub mod lexer;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use identifiers::{extract_identifiers, IdentifierOccurrence, Role};
pub use lexer::{lex_code, strip_noise, Token, TokenKind};

/// One knowledge-base entry: normalized source, its token stream, and the
/// identifiers with structural roles.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSnippet {
    pub id: String,
    pub source: String,
    pub tokens: Vec<Token>,
    pub identifiers: Vec<IdentifierOccurrence>,
    pub is_vulnerable: bool,
    pub vuln_marker: Option<String>,
}

impl CodeSnippet {
    /// Build a snippet from raw code. The source is noise-stripped, lexed,
    /// and identifier roles extracted. A set `vuln_marker` forces
    /// `is_vulnerable`.
    pub fn new(
        id: impl Into<String>,
        code: &str,
        is_vulnerable: bool,
        vuln_marker: Option<String>,
    ) -> Result<Self> {
        let source = strip_noise(code)?;
        let tokens = lex_code(&source)?;
        let identifiers = extract_identifiers(&tokens);
        Ok(CodeSnippet {
            id: id.into(),
            source,
            tokens,
            identifiers,
            is_vulnerable: is_vulnerable || vuln_marker.is_some(),
            vuln_marker,
        })
    }

    /// Token texts in order, the unit of embedding and overlap metrics.
    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

/// A natural-language query paired with its ground-truth snippet id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCodePair {
    pub query: String,
    pub code_id: String,
}

/// A named snippet collection, optionally with query-code pairs.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub name: String,
    pub snippets: Vec<CodeSnippet>,
    pub pairs: Option<Vec<QueryCodePair>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnippetRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    docstring: Option<String>,
    code: String,
    #[serde(default)]
    is_vulnerable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vuln_marker: Option<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, snippets: Vec<CodeSnippet>) -> Result<Self> {
        let corpus = Corpus {
            name: name.into(),
            snippets,
            pairs: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for snippet in &self.snippets {
            if !seen.insert(snippet.id.as_str()) {
                return Err(Error::DuplicateId(snippet.id.clone()));
            }
            if snippet.vuln_marker.is_some() && !snippet.is_vulnerable {
                return Err(Error::CorpusFormat(format!(
                    "snippet {} has vuln_marker but is_vulnerable is false",
                    snippet.id
                )));
            }
        }
        if let Some(pairs) = &self.pairs {
            for pair in pairs {
                if pair.query.split_whitespace().next().is_none() {
                    return Err(Error::CorpusFormat(format!(
                        "pair for {} has an empty query",
                        pair.code_id
                    )));
                }
                if !seen.contains(pair.code_id.as_str()) {
                    return Err(Error::CorpusFormat(format!(
                        "pair references unknown snippet id {}",
                        pair.code_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Load a snippet corpus. Records carrying a docstring also contribute
    /// query-code pairs.
    pub fn load_jsonl(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self> {
        Self::load_inner(path.as_ref(), name.into(), false)
    }

    /// Load a pair corpus; every record must carry a docstring.
    pub fn load_pairs_jsonl(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self> {
        Self::load_inner(path.as_ref(), name.into(), true)
    }

    fn load_inner(path: &Path, name: String, require_docstring: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut snippets = Vec::new();
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SnippetRecord = serde_json::from_str(&line).map_err(|e| {
                Error::CorpusFormat(format!("{}:{}: {}", path.display(), lineno + 1, e))
            })?;
            match &record.docstring {
                Some(doc) => pairs.push(QueryCodePair {
                    query: doc.clone(),
                    code_id: record.id.clone(),
                }),
                None if require_docstring => {
                    return Err(Error::CorpusFormat(format!(
                        "{}:{}: pair record missing docstring",
                        path.display(),
                        lineno + 1
                    )));
                }
                None => {}
            }
            snippets.push(CodeSnippet::new(
                record.id,
                &record.code,
                record.is_vulnerable,
                record.vuln_marker,
            )?);
        }
        let corpus = Corpus {
            name,
            snippets,
            pairs: if pairs.is_empty() { None } else { Some(pairs) },
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Write the corpus as JSONL with LF endings. Pair queries are stored
    /// as docstrings on their snippets.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut docstrings: BTreeMap<&str, &str> = BTreeMap::new();
        if let Some(pairs) = &self.pairs {
            for pair in pairs {
                docstrings.insert(pair.code_id.as_str(), pair.query.as_str());
            }
        }
        let mut file = std::fs::File::create(path)?;
        for snippet in &self.snippets {
            let record = SnippetRecord {
                id: snippet.id.clone(),
                docstring: docstrings.get(snippet.id.as_str()).map(|s| s.to_string()),
                code: snippet.source.clone(),
                is_vulnerable: snippet.is_vulnerable,
                vuln_marker: snippet.vuln_marker.clone(),
            };
            serde_json::to_writer(&mut file, &record)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn snippet_by_id(&self, id: &str) -> Option<&CodeSnippet> {
        self.snippets.iter().find(|s| s.id == id)
    }
}

/// Exact corpus-wide token counts: total occurrences and the number of
/// snippets containing each token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStats {
    entries: BTreeMap<String, TokenEntry>,
    pub doc_total: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TokenEntry {
    pub count: u64,
    pub doc_count: u64,
    pub is_identifier: bool,
}

impl TokenStats {
    pub fn count(&self, token: &str) -> u64 {
        self.entries.get(token).map_or(0, |e| e.count)
    }

    pub fn doc_count(&self, token: &str) -> u64 {
        self.entries.get(token).map_or(0, |e| e.doc_count)
    }

    pub fn is_identifier(&self, token: &str) -> bool {
        self.entries.get(token).is_some_and(|e| e.is_identifier)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TokenEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Count token occurrences and document frequencies across a corpus.
pub fn corpus_token_stats(corpus: &Corpus) -> TokenStats {
    let mut entries: BTreeMap<String, TokenEntry> = BTreeMap::new();
    for snippet in &corpus.snippets {
        let mut seen_in_doc: HashSet<&str> = HashSet::new();
        for token in &snippet.tokens {
            let entry = entries.entry(token.text.clone()).or_default();
            entry.count += 1;
            entry.is_identifier |= token.kind == TokenKind::Identifier;
            if seen_in_doc.insert(token.text.as_str()) {
                entry.doc_count += 1;
            }
        }
    }
    TokenStats {
        entries,
        doc_total: corpus.snippets.len(),
    }
}

/// Per-snippet values of one profile dimension with lower-median summary
/// statistics. Quartiles use the lower-median rule on each half (the
/// middle element is excluded from both halves when the count is odd).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureDimension {
    pub values: Vec<usize>,
    pub median: usize,
    pub iqr: usize,
}

impl FeatureDimension {
    fn from_values(values: Vec<usize>) -> Self {
        let mut sorted = values.clone();
        sorted.sort_unstable();
        let (median, iqr) = if sorted.is_empty() {
            (0, 0)
        } else if sorted.len() == 1 {
            (sorted[0], 0)
        } else {
            let median = lower_median(&sorted);
            let half = sorted.len() / 2;
            let q1 = lower_median(&sorted[..half]);
            let q3 = lower_median(&sorted[sorted.len() - half..]);
            (median, q3 - q1)
        };
        FeatureDimension {
            values,
            median,
            iqr,
        }
    }
}

fn lower_median(sorted: &[usize]) -> usize {
    sorted[(sorted.len() - 1) / 2]
}

/// The four feature dimensions used to characterize a knowledge base:
/// token count, control-keyword count, unique-token count, and colon count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureProfile {
    pub code_length: FeatureDimension,
    pub control_flow: FeatureDimension,
    pub lexical_diversity: FeatureDimension,
    pub structural_complexity: FeatureDimension,
}

/// Profile every snippet of the corpus along the four feature dimensions.
pub fn kb_feature_profile(corpus: &Corpus) -> FeatureProfile {
    let mut code_length = Vec::with_capacity(corpus.snippets.len());
    let mut control_flow = Vec::with_capacity(corpus.snippets.len());
    let mut lexical_diversity = Vec::with_capacity(corpus.snippets.len());
    let mut structural_complexity = Vec::with_capacity(corpus.snippets.len());
    for snippet in &corpus.snippets {
        code_length.push(snippet.tokens.len());
        control_flow.push(
            snippet
                .tokens
                .iter()
                .filter(|t| t.kind == TokenKind::ControlKeyword)
                .count(),
        );
        lexical_diversity.push(
            snippet
                .tokens
                .iter()
                .map(|t| t.text.as_str())
                .collect::<HashSet<_>>()
                .len(),
        );
        structural_complexity.push(snippet.tokens.iter().filter(|t| t.text == ":").count());
    }
    FeatureProfile {
        code_length: FeatureDimension::from_values(code_length),
        control_flow: FeatureDimension::from_values(control_flow),
        lexical_diversity: FeatureDimension::from_values(lexical_diversity),
        structural_complexity: FeatureDimension::from_values(structural_complexity),
    }
}

/// Split text on non-alphanumeric characters and lowercase the words.
/// This is the query-side tokenization used for target selection and
/// query embedding.
pub fn word_tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect()
}
