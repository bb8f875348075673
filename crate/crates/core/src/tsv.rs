//! Shared helpers for the tab-separated file formats.
//!
//! Every persisted artifact is UTF-8 text. Metadata lives in leading lines of
//! the form `#! key=value`; other lines starting with `#` are comments. Fields
//! are escaped so that tokens containing tabs, newlines or backslashes survive
//! a round trip.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// Escape a field for a tab-separated row.
pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    // A bare leading '#' would read back as a comment line.
    if out.starts_with('#') {
        out.insert(0, '\\');
    }
    out
}

/// Inverse of [`escape`].
pub fn unescape(field: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('#') => out.push('#'),
            other => {
                return Err(Error::parse(
                    line,
                    format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default()),
                ))
            }
        }
    }
    Ok(out)
}

/// Render a float with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Keeps -0.0 and 0.0 textually distinct from nothing else; both read back as zero.
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value: {s:?}")));
    }
    Ok(v)
}

pub fn parse_u64(s: &str, line: usize) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("not a non-negative integer: {s:?}")))
}

/// Ordered `#!` metadata block. Duplicate keys with conflicting values are
/// rejected on read.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.entries.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::parse(0, format!("missing metadata key `{key}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extend(&mut self, other: &Metadata) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "#! {k}={}", v.replace('\n', "\\n"));
        }
        out
    }

    /// Absorb one `#!` line. `line` is 1-based for diagnostics.
    fn absorb(&mut self, body: &str, line: usize) -> Result<()> {
        let (k, v) = body
            .trim_start()
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("metadata line without `=`: {body:?}")))?;
        let (k, v) = (k.trim(), v.trim_end_matches('\r'));
        if k.is_empty() {
            return Err(Error::parse(line, "empty metadata key"));
        }
        match self.entries.get(k) {
            Some(prev) if prev != v => Err(Error::parse(
                line,
                format!("metadata key `{k}` given twice with different values ({prev:?} vs {v:?})"),
            )),
            _ => {
                self.entries.insert(k.to_string(), v.to_string());
                Ok(())
            }
        }
    }
}

/// A parsed data row with its 1-based line number.
#[derive(Debug)]
pub struct Row<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

impl Row<'_> {
    pub fn expect_len(&self, n: usize) -> Result<()> {
        if self.fields.len() != n {
            return Err(Error::parse(
                self.line,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }
}

/// Split a document into its metadata, plain `#` comment lines and data rows.
pub struct Document<'a> {
    pub meta: Metadata,
    pub comments: Vec<(usize, &'a str)>,
    pub rows: Vec<Row<'a>>,
}

pub fn split_document(text: &str) -> Result<Document<'_>> {
    let mut meta = Metadata::new();
    let mut comments = Vec::new();
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(body) = raw.strip_prefix("#!") {
            meta.absorb(body, line)?;
        } else if let Some(body) = raw.strip_prefix('#') {
            comments.push((line, body));
        } else if raw.is_empty() {
            continue;
        } else {
            rows.push(Row {
                line,
                fields: raw.split('\t').collect(),
            });
        }
    }
    Ok(Document {
        meta,
        comments,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_round_trip_awkward_tokens() {
        for tok in ["plain", "tab\there", "nl\n", "back\\slash", "#hash", "\\#", ""] {
            assert_eq!(unescape(&escape(tok), 1).unwrap(), tok);
            assert!(!escape(tok).contains('\t'));
        }
    }

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, -3.5e-300, 13.67, f64::MAX, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(parse_f64(&fmt_f64(x), 1).unwrap(), x);
        }
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn conflicting_metadata_is_rejected() {
        let err = split_document("#! alpha=0.01\n#! alpha=0.1\n").err().unwrap();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        // repeating an identical value is harmless
        assert!(split_document("#! k=2\n#! k=2\n").is_ok());
    }
}
