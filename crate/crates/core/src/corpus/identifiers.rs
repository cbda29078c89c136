//! Identifier extraction with shallow structural roles.
//!
//! Roles come from local token context, not an AST: the name after `def`
//! is a function name, names inside the def parens are parameters, the
//! name after `for` is a loop variable, the left-hand side of `=` at a
//! statement start is an assigned variable, and a name after `.` is an
//! attribute. Everything else is `Other`.

use super::lexer::{Token, TokenKind};

/// Structural role of an identifier, used as its "type" by the
/// injection-site weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    FunctionName,
    Parameter,
    LoopVariable,
    AssignedVariable,
    Attribute,
    Other,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::FunctionName,
        Role::Parameter,
        Role::LoopVariable,
        Role::AssignedVariable,
        Role::Attribute,
        Role::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::FunctionName => "function_name",
            Role::Parameter => "parameter",
            Role::LoopVariable => "loop_variable",
            Role::AssignedVariable => "assigned_variable",
            Role::Attribute => "attribute",
            Role::Other => "other",
        }
    }
}

/// All occurrences of one identifier name in a snippet, with its role.
/// When a name matches several role rules across its occurrences, the
/// highest-precedence role wins (declaration order of [`Role::ALL`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierOccurrence {
    pub name: String,
    pub role: Role,
    pub token_indices: Vec<usize>,
}

/// Extract one record per distinct identifier name, ordered by first
/// occurrence. Empty input yields an empty result.
pub fn extract_identifiers(tokens: &[Token]) -> Vec<IdentifierOccurrence> {
    let marks = role_marks(tokens);

    let mut order: Vec<&str> = Vec::new();
    let mut by_name: std::collections::HashMap<&str, (Role, Vec<usize>)> =
        std::collections::HashMap::new();
    for (idx, tok) in tokens.iter().enumerate() {
        if tok.kind != TokenKind::Identifier {
            continue;
        }
        let entry = by_name.entry(tok.text.as_str()).or_insert_with(|| {
            order.push(tok.text.as_str());
            (Role::Other, Vec::new())
        });
        entry.1.push(idx);
        if let Some(role) = marks[idx] {
            if role < entry.0 {
                entry.0 = role;
            }
        }
    }

    order
        .into_iter()
        .map(|name| {
            let (role, token_indices) = by_name.remove(name).expect("name recorded");
            IdentifierOccurrence {
                name: name.to_string(),
                role,
                token_indices,
            }
        })
        .collect()
}

/// Per-token role mark for identifier tokens, from local context.
fn role_marks(tokens: &[Token]) -> Vec<Option<Role>> {
    let mut marks: Vec<Option<Role>> = vec![None; tokens.len()];
    let mut depth: usize = 0;
    // Paren depth of the def signature currently being scanned, if any.
    let mut def_paren_depth: Option<usize> = None;
    // Inside `for ... in`: marks loop variables until the `in` keyword.
    let mut in_for_header = false;
    let mut prev_line = 0usize;

    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        let stmt_start = depth == 0 && tok.line > prev_line;
        prev_line = tok.line;

        match (&tok.kind, tok.text.as_str()) {
            (TokenKind::Delimiter, "(")
            | (TokenKind::Delimiter, "[")
            | (TokenKind::Delimiter, "{") => {
                depth += 1;
            }
            (TokenKind::Delimiter, ")")
            | (TokenKind::Delimiter, "]")
            | (TokenKind::Delimiter, "}") => {
                depth = depth.saturating_sub(1);
                if def_paren_depth == Some(depth) {
                    def_paren_depth = None;
                }
            }
            (TokenKind::Keyword, "def") => {
                if let Some(next) = tokens.get(i + 1) {
                    if next.kind == TokenKind::Identifier {
                        marks[i + 1] = Some(Role::FunctionName);
                    }
                }
                // Parameters live inside the paren group that opens next.
                if let Some(open) = tokens[i + 1..].iter().position(|t| t.text == "(") {
                    let open_idx = i + 1 + open;
                    // Depth value once that paren is consumed.
                    let mut d = depth;
                    for t in &tokens[i + 1..open_idx] {
                        match t.text.as_str() {
                            "(" | "[" | "{" => d += 1,
                            ")" | "]" | "}" => d = d.saturating_sub(1),
                            _ => {}
                        }
                    }
                    def_paren_depth = Some(d);
                }
            }
            (TokenKind::ControlKeyword, "for") => {
                in_for_header = true;
            }
            (TokenKind::Keyword, "in") => {
                in_for_header = false;
            }
            (TokenKind::Identifier, _) if marks[i].is_none() => {
                if def_paren_depth.is_some_and(|d| depth > d) {
                    marks[i] = Some(Role::Parameter);
                } else if in_for_header {
                    marks[i] = Some(Role::LoopVariable);
                } else if i > 0 && tokens[i - 1].text == "." {
                    marks[i] = Some(Role::Attribute);
                } else if stmt_start {
                    if let Some(assigned) = assignment_run(tokens, i) {
                        for idx in assigned {
                            marks[idx] = Some(Role::AssignedVariable);
                        }
                    }
                }
            }
            _ => {}
        }
        i += 1;
    }
    marks
}

/// If tokens from `start` form `name (, name)* =` with a plain `=`,
/// return the identifier indices on the left-hand side.
fn assignment_run(tokens: &[Token], start: usize) -> Option<Vec<usize>> {
    let mut idxs = Vec::new();
    let mut i = start;
    loop {
        match tokens.get(i) {
            Some(t) if t.kind == TokenKind::Identifier => idxs.push(i),
            _ => return None,
        }
        match tokens.get(i + 1).map(|t| t.text.as_str()) {
            Some("=") => return Some(idxs),
            Some(",") => i += 2,
            _ => return None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexer::lex_code;

    fn roles_of(src: &str) -> Vec<(String, Role)> {
        let tokens = lex_code(src).unwrap();
        extract_identifiers(&tokens)
            .into_iter()
            .map(|occ| (occ.name, occ.role))
            .collect()
    }

    #[test]
    fn def_parameter_and_assignment_roles() {
        let src = "def f(a):\n    b = a";
        let got = roles_of(src);
        assert_eq!(
            got,
            vec![
                ("f".to_string(), Role::FunctionName),
                ("a".to_string(), Role::Parameter),
                ("b".to_string(), Role::AssignedVariable),
            ]
        );
    }

    #[test]
    fn loop_variable_and_other() {
        let src = "for i in r: pass";
        let got = roles_of(src);
        assert_eq!(
            got,
            vec![
                ("i".to_string(), Role::LoopVariable),
                ("r".to_string(), Role::Other),
            ]
        );
    }

    #[test]
    fn attribute_after_dot() {
        let src = "x = obj.read()";
        let got = roles_of(src);
        assert_eq!(
            got,
            vec![
                ("x".to_string(), Role::AssignedVariable),
                ("obj".to_string(), Role::Other),
                ("read".to_string(), Role::Attribute),
            ]
        );
    }

    #[test]
    fn precedence_parameter_over_assigned() {
        // `a` is both a parameter and later assigned; parameter wins.
        let src = "def f(a):\n    a = 1";
        let got = roles_of(src);
        assert!(got.contains(&("a".to_string(), Role::Parameter)));
    }

    #[test]
    fn tuple_assignment_marks_all_names() {
        let src = "a, b = pair";
        let got = roles_of(src);
        assert_eq!(
            got,
            vec![
                ("a".to_string(), Role::AssignedVariable),
                ("b".to_string(), Role::AssignedVariable),
                ("pair".to_string(), Role::Other),
            ]
        );
    }

    #[test]
    fn token_indices_cover_all_occurrences() {
        let src = "x = x + x";
        let tokens = lex_code(src).unwrap();
        let occ = extract_identifiers(&tokens);
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].token_indices, vec![0, 2, 4]);
        for &idx in &occ[0].token_indices {
            assert_eq!(tokens[idx].kind, TokenKind::Identifier);
        }
    }

    #[test]
    fn golden_fifteen_identifier_fixture() {
        // Role rules applied by hand once; frozen.
        let src = "\
def parse_config(path, defaults):
    handle = open(path, mode)
    raw = handle.read()
    table = defaults
    for key in raw.split():
        name, value = key, raw
        table[name] = value
    total = counter.total
    return table
";
        let got = roles_of(src);
        let expected = vec![
            ("parse_config".to_string(), Role::FunctionName),
            ("path".to_string(), Role::Parameter),
            ("defaults".to_string(), Role::Parameter),
            ("handle".to_string(), Role::AssignedVariable),
            ("open".to_string(), Role::Other),
            ("mode".to_string(), Role::Other),
            ("raw".to_string(), Role::AssignedVariable),
            ("read".to_string(), Role::Attribute),
            ("table".to_string(), Role::AssignedVariable),
            ("key".to_string(), Role::LoopVariable),
            ("split".to_string(), Role::Attribute),
            ("name".to_string(), Role::AssignedVariable),
            ("value".to_string(), Role::AssignedVariable),
            ("total".to_string(), Role::AssignedVariable),
            ("counter".to_string(), Role::Other),
        ];
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_input_yields_no_identifiers() {
        assert!(extract_identifiers(&[]).is_empty());
    }
}
