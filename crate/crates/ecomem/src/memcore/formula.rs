//! Model formula parsing: `response ~ a*b + c + a:d`.
//!
//! `a*b` expands to the two main effects plus the interaction; `a:b` is the
//! interaction alone. Interactions are stored with their variables in
//! alphabetical order and duplicate terms collapse, keeping first-appearance
//! order.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum FormulaError {
    #[error("parse error at position {position}: expected {expected}")]
    ParseError { position: usize, expected: String },
    #[error("a variable cannot interact with itself: `{0}`")]
    SelfInteraction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

impl Term {
    fn interaction(a: String, b: String) -> Term {
        if a <= b {
            Term::Interaction(a, b)
        } else {
            Term::Interaction(b, a)
        }
    }

    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Main(v) => vec![v],
            Term::Interaction(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(v) => write!(f, "{v}"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub response: String,
    pub terms: Vec<Term>,
}

impl Formula {
    /// Distinct covariate names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for v in t.variables() {
                if !out.iter().any(|x| x == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }

    /// Position of a term by its display name (`v1` or `v1:v2`, either
    /// variable order).
    pub fn term_index(&self, name: &str) -> Option<usize> {
        let wanted = match name.split_once(':') {
            Some((a, b)) => Term::interaction(a.trim().to_string(), b.trim().to_string()),
            None => Term::Main(name.trim().to_string()),
        };
        self.terms.iter().position(|t| *t == wanted)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

struct Scanner<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.as_bytes().get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<String, FormulaError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len()
            && (bytes[self.pos].is_ascii_alphanumeric()
                || bytes[self.pos] == b'_'
                || bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos == start || bytes[start].is_ascii_digit() {
            return Err(FormulaError::ParseError {
                position: start,
                expected: "variable name".into(),
            });
        }
        Ok(self.text[start..self.pos].to_string())
    }
}

/// Parses `response ~ term (+ term)*` where a term is `name`, `name*name`,
/// or `name:name`.
pub fn parse_formula(text: &str) -> Result<Formula, FormulaError> {
    let mut sc = Scanner { text, pos: 0 };
    let response = sc.name()?;
    if !sc.eat(b'~') {
        return Err(FormulaError::ParseError {
            position: sc.pos,
            expected: "`~`".into(),
        });
    }

    let mut terms: Vec<Term> = Vec::new();
    let push = |t: Term, terms: &mut Vec<Term>| {
        if !terms.contains(&t) {
            terms.push(t);
        }
    };

    loop {
        let a = sc.name()?;
        match sc.peek() {
            Some(b'*') => {
                sc.pos += 1;
                let b = sc.name()?;
                if a == b {
                    return Err(FormulaError::SelfInteraction(a));
                }
                push(Term::Main(a.clone()), &mut terms);
                push(Term::Main(b.clone()), &mut terms);
                push(Term::interaction(a, b), &mut terms);
            }
            Some(b':') => {
                sc.pos += 1;
                let b = sc.name()?;
                if a == b {
                    return Err(FormulaError::SelfInteraction(a));
                }
                push(Term::interaction(a, b), &mut terms);
            }
            _ => push(Term::Main(a), &mut terms),
        }
        if !sc.eat(b'+') {
            break;
        }
    }
    sc.skip_ws();
    if sc.pos != text.len() {
        return Err(FormulaError::ParseError {
            position: sc.pos,
            expected: "`+` or end of formula".into(),
        });
    }
    Ok(Formula { response, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(f: &Formula) -> Vec<String> {
        f.terms.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn star_expansion() {
        let f = parse_formula("y ~ v1*v2 + v2*v3").unwrap();
        assert_eq!(f.response, "y");
        assert_eq!(names(&f), vec!["v1", "v2", "v1:v2", "v3", "v2:v3"]);
    }

    #[test]
    fn plain_mains() {
        let f = parse_formula("gr ~ age + ftc").unwrap();
        assert_eq!(f.response, "gr");
        assert_eq!(names(&f), vec!["age", "ftc"]);
    }

    #[test]
    fn empty_terms_is_error() {
        assert!(matches!(
            parse_formula("y ~"),
            Err(FormulaError::ParseError { .. })
        ));
    }

    #[test]
    fn interaction_only() {
        let f = parse_formula("y ~ b:a").unwrap();
        assert_eq!(names(&f), vec!["a:b"]);
    }

    #[test]
    fn duplicate_terms_collapse() {
        let f = parse_formula("y ~ v1 + v1 + v2:v1 + v1*v2").unwrap();
        assert_eq!(names(&f), vec!["v1", "v1:v2", "v2"]);
    }

    #[test]
    fn trailing_garbage_is_error() {
        assert!(parse_formula("y ~ v1 v2").is_err());
        assert!(parse_formula("y ~ v1 +").is_err());
        assert!(parse_formula("~ v1").is_err());
    }

    #[test]
    fn self_interaction_rejected() {
        assert_eq!(
            parse_formula("y ~ v1:v1"),
            Err(FormulaError::SelfInteraction("v1".into()))
        );
    }

    #[test]
    fn variables_in_first_appearance_order() {
        let f = parse_formula("y ~ v2:v3 + v1").unwrap();
        assert_eq!(f.variables(), vec!["v2", "v3", "v1"]);
    }

    #[test]
    fn term_index_handles_either_order() {
        let f = parse_formula("y ~ v1*v2").unwrap();
        assert_eq!(f.term_index("v2:v1"), Some(2));
        assert_eq!(f.term_index("v1"), Some(0));
        assert_eq!(f.term_index("zz"), None);
    }
}
