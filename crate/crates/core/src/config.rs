//! Shared helpers for the TOML configuration documents (capability catalog,
//! retention classes, policy documents, triggers, scenarios).

use std::fmt;

use serde::de::DeserializeOwned;
use thiserror::Error;

/// A configuration or document parse failure, located by line and field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}, field `{}`: {}", self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl ParseError {
    pub fn new(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, field: field.into(), message: message.into() }
    }
}

/// 1-based line number of byte offset `pos` in `src`.
pub fn line_at(src: &str, pos: usize) -> usize {
    src[..pos.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Deserializes a TOML document, converting syntax/type errors into a located
/// [`ParseError`].
pub fn parse_toml<T: DeserializeOwned>(src: &str) -> Result<T, ParseError> {
    toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_at(src, s.start));
        let field = e
            .span()
            .map(|s| guess_field(src, s.start))
            .unwrap_or_else(|| "document".to_owned());
        ParseError::new(line, field, e.message().to_owned())
    })
}

fn guess_field(src: &str, pos: usize) -> String {
    let start = src[..pos.min(src.len())].rfind('\n').map(|i| i + 1).unwrap_or(0);
    let line = src[start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) => key.trim().trim_matches('"').to_owned(),
        None => line.trim().to_owned(),
    }
}

/// Line of the first `key = …` assignment at or after line `from_line`.
pub fn line_of_key(src: &str, key: &str, from_line: usize) -> Option<usize> {
    src.lines().enumerate().skip(from_line.saturating_sub(1)).find_map(|(i, l)| {
        let (k, _) = l.split_once('=')?;
        (k.trim().trim_matches('"') == key).then_some(i + 1)
    })
}

/// Line numbers of each `[[table]]` header, in order.
pub fn array_table_lines(src: &str, table: &str) -> Vec<usize> {
    let header = format!("[[{table}]]");
    src.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .map(|(i, _)| i + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Deserialize, Debug)]
    #[allow(dead_code)]
    struct Doc {
        a: u32,
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = parse_toml::<Doc>("\n\na = \"text\"\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "a");
    }

    #[test]
    fn finds_keys_and_tables() {
        let src = "[[rule]]\nid = 1\n\n[[rule]]\nid = 2\n";
        assert_eq!(array_table_lines(src, "rule"), vec![1, 4]);
        assert_eq!(line_of_key(src, "id", 4), Some(5));
    }
}
