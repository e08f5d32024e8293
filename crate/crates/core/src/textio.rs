//! Helpers shared by the line-oriented text formats.

use std::fmt;
use std::str::{FromStr, SplitWhitespace};

use thiserror::Error;

/// Malformed input, located by 1-based line number and field name.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {field}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { line, field: field.into(), message: message.into() }
    }
}

/// Shortest representation that parses back to the same `f64`.
pub struct Float(pub f64);

impl fmt::Display for Float {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        let a = v.abs();
        if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
            write!(f, "{v}")
        } else {
            write!(f, "{v:e}")
        }
    }
}

/// Whitespace tokenizer over one record that reports errors against its line.
pub struct Fields<'a> {
    line: usize,
    tokens: SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub fn new(line: usize, text: &'a str) -> Self {
        Self { line, tokens: text.split_whitespace() }
    }

    pub fn line(&self) -> usize {
        self.line
    }

    pub fn next_str(&mut self, field: &str) -> Result<&'a str, ParseError> {
        self.tokens.next().ok_or_else(|| ParseError::new(self.line, field, "missing value"))
    }

    pub fn parse<T: FromStr>(&mut self, field: &str) -> Result<T, ParseError>
    where
        T::Err: fmt::Display,
    {
        let tok = self.next_str(field)?;
        tok.parse::<T>().map_err(|e| ParseError::new(self.line, field, format!("cannot parse {tok:?}: {e}")))
    }

    pub fn floats<const N: usize>(&mut self, field: &str) -> Result<[f64; N], ParseError> {
        let mut out = [0.0; N];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.parse(&format!("{field}[{i}]"))?;
        }
        Ok(out)
    }

    pub fn flag(&mut self, field: &str) -> Result<bool, ParseError> {
        match self.next_str(field)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(ParseError::new(self.line, field, format!("expected 0 or 1, got {other:?}"))),
        }
    }

    pub fn finish(mut self) -> Result<(), ParseError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(extra) => Err(ParseError::new(self.line, "record", format!("unexpected trailing value {extra:?}"))),
        }
    }
}

/// Non-empty, non-comment lines with their 1-based numbers.
pub fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}
