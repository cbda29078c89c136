//! Deterministic mock generator standing in for a black-box LLM.
//!
//! The output is the query as a header comment over the rank-1 snippet
//! body. Vulnerability markers propagate from any retrieved snippet whose
//! tokens overlap the emitted body by at least [`OVERLAP_THRESHOLD`]:
//! rank-1 poisons always propagate (overlap 1), deep-ranked ones usually
//! do not.

use std::collections::HashMap;

use crate::corpus::CodeSnippet;
use crate::error::{Error, Result};

/// Minimum fraction of a snippet's tokens that must appear in the emitted
/// body for its marker to be inherited.
pub const OVERLAP_THRESHOLD: f64 = 0.3;

/// One mock generation: emitted text plus inherited vulnerability markers
/// in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCode {
    pub text: String,
    pub inherited_markers: Vec<String>,
}

impl GeneratedCode {
    pub fn is_vulnerable(&self) -> bool {
        !self.inherited_markers.is_empty()
    }
}

/// Fraction of `snippet`'s tokens (as a multiset) found among the body
/// tokens.
fn token_overlap(snippet: &CodeSnippet, body_counts: &HashMap<&str, usize>) -> f64 {
    if snippet.tokens.is_empty() {
        return 0.0;
    }
    let mut remaining = body_counts.clone();
    let mut hits = 0usize;
    for token in &snippet.tokens {
        if let Some(count) = remaining.get_mut(token.text.as_str()) {
            if *count > 0 {
                *count -= 1;
                hits += 1;
            }
        }
    }
    hits as f64 / snippet.tokens.len() as f64
}

/// Generate code for `query` from the retrieved context.
pub fn mock_generate(query: &str, topk: &[&CodeSnippet]) -> Result<GeneratedCode> {
    let first = topk
        .first()
        .ok_or_else(|| Error::EmptyContext(query.to_string()))?;
    let text = format!("# {}\n{}", query.replace('\n', " "), first.source);

    let mut body_counts: HashMap<&str, usize> = HashMap::new();
    for token in &first.tokens {
        *body_counts.entry(token.text.as_str()).or_insert(0) += 1;
    }

    let mut inherited_markers = Vec::new();
    for snippet in topk {
        if let Some(marker) = &snippet.vuln_marker {
            if token_overlap(snippet, &body_counts) >= OVERLAP_THRESHOLD
                && !inherited_markers.contains(marker)
            {
                inherited_markers.push(marker.clone());
            }
        }
    }
    Ok(GeneratedCode {
        text,
        inherited_markers,
    })
}

/// Fraction of generated outputs carrying a vulnerability marker.
pub fn vulnerability_rate(outputs: &[GeneratedCode]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|o| o.is_vulnerable()).count() as f64 / outputs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(id: &str, code: &str) -> CodeSnippet {
        CodeSnippet::new(id, code, false, None).unwrap()
    }

    fn marked(id: &str, code: &str) -> CodeSnippet {
        CodeSnippet::new(id, code, true, Some(format!("__VULN_{id}__"))).unwrap()
    }

    #[test]
    fn rank_one_poison_propagates() {
        let poison = marked("p", "evil = open(path)");
        let other = clean("c", "x = 1");
        let generated = mock_generate("read a file", &[&poison, &other]).unwrap();
        assert_eq!(generated.inherited_markers, vec!["__VULN_p__"]);
        assert!(generated.text.starts_with("# read a file\n"));
        assert!(generated.text.contains("evil = open(path)"));
    }

    #[test]
    fn unmarked_context_stays_clean() {
        let a = clean("a", "x = 1");
        let b = clean("b", "y = 2");
        let generated = mock_generate("sum", &[&a, &b]).unwrap();
        assert!(!generated.is_vulnerable());
    }

    #[test]
    fn low_overlap_deep_rank_does_not_propagate() {
        // By hand: body "x = open(path)" has counts {x:1, =:1, open:1,
        // (:1, path:1, ):1}. Poison tokens are [evil, =, run, (, cmd, ),
        // drop, =, tmp, +, 1] (11 total); multiset hits are one "=", one
        // "(", one ")" = 3, so overlap 3/11 = 0.2727 < 0.3.
        let top = clean("t", "x = open(path)");
        let poison = marked("p", "evil = run(cmd)\ndrop = tmp + 1");
        let generated = mock_generate("q", &[&top, &poison]).unwrap();
        assert!(!generated.is_vulnerable());
    }

    #[test]
    fn high_overlap_deep_rank_propagates() {
        let top = clean("t", "buf = read(path)\nout = buf + 1");
        // Shares most tokens with the body.
        let poison = marked("p", "buf = read(path)");
        let generated = mock_generate("q", &[&top, &poison]).unwrap();
        assert_eq!(generated.inherited_markers, vec!["__VULN_p__"]);
    }

    #[test]
    fn empty_context_is_an_error() {
        assert!(matches!(
            mock_generate("q", &[]),
            Err(Error::EmptyContext(_))
        ));
    }

    #[test]
    fn vulnerability_rate_arithmetic() {
        let make = |vulnerable: bool| GeneratedCode {
            text: String::new(),
            inherited_markers: if vulnerable {
                vec!["m".to_string()]
            } else {
                vec![]
            },
        };
        let outputs: Vec<GeneratedCode> = (0..10).map(|i| make(i < 4)).collect();
        assert!((vulnerability_rate(&outputs) - 0.4).abs() < 1e-12);
        assert_eq!(vulnerability_rate(&[]), 0.0);
        let all: Vec<GeneratedCode> = (0..3).map(|_| make(true)).collect();
        assert_eq!(vulnerability_rate(&all), 1.0);
        let none: Vec<GeneratedCode> = (0..3).map(|_| make(false)).collect();
        assert_eq!(vulnerability_rate(&none), 0.0);
    }
}
