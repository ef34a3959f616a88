//! The sectioned plain-text format shared by lexicon, template, and config files.
//!
//! ```text
//! # comment
//! [section]
//! line one
//! key = value
//! key2 = "value with trailing space "
//! ```
//!
//! Lines starting with `#` (after trimming) and blank lines are ignored.
//! Lines before the first header are an error.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SectionedError {
    #[error("line {line}: content before the first [section] header")]
    Orphan { line: usize },
    #[error("line {line}: malformed section header {text:?}")]
    BadHeader { line: usize, text: String },
    #[error("line {line}: duplicate section [{name}]")]
    DuplicateSection { line: usize, name: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadEntry { line: usize, text: String },
    #[error("line {line}: bad quoted value: {reason}")]
    BadQuote { line: usize, reason: String },
}

/// One `[name]` block and its raw lines, with source line numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub header_line: usize,
    pub lines: Vec<(usize, String)>,
}

impl Section {
    /// Interprets every line as `key = value`. Values wrapped in double quotes
    /// are decoded as JSON string literals, so `"Answer: "` keeps its space
    /// and `\n` escapes work.
    pub fn entries(&self) -> Result<BTreeMap<String, String>, SectionedError> {
        let mut out = BTreeMap::new();
        for (line, text) in &self.lines {
            let Some((key, value)) = text.split_once('=') else {
                return Err(SectionedError::BadEntry {
                    line: *line,
                    text: text.clone(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(SectionedError::BadEntry {
                    line: *line,
                    text: text.clone(),
                });
            }
            let value = decode_value(value.trim(), *line)?;
            out.insert(key.to_string(), value);
        }
        Ok(out)
    }
}

fn decode_value(raw: &str, line: usize) -> Result<String, SectionedError> {
    if raw.starts_with('"') {
        serde_json::from_str::<String>(raw).map_err(|e| SectionedError::BadQuote {
            line,
            reason: e.to_string(),
        })
    } else {
        Ok(raw.to_string())
    }
}

/// Encodes a value so that [`Section::entries`] reads it back unchanged.
pub fn encode_value(value: &str) -> String {
    let needs_quote = value.is_empty()
        || value.trim() != value
        || value.starts_with('"')
        || value.contains(['\n', '\r', '\t']);
    if needs_quote {
        serde_json::to_string(value).expect("strings always serialize")
    } else {
        value.to_string()
    }
}

/// Splits a document into sections, preserving order.
pub fn parse(text: &str) -> Result<Vec<Section>, SectionedError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with('[') {
            if !trimmed.ends_with(']') || trimmed.len() < 3 {
                return Err(SectionedError::BadHeader {
                    line,
                    text: trimmed.to_string(),
                });
            }
            let name = trimmed[1..trimmed.len() - 1].trim().to_string();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(SectionedError::BadHeader {
                    line,
                    text: trimmed.to_string(),
                });
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(SectionedError::DuplicateSection { line, name });
            }
            sections.push(Section {
                name,
                header_line: line,
                lines: Vec::new(),
            });
            continue;
        }
        match sections.last_mut() {
            Some(section) => section.lines.push((line, trimmed.to_string())),
            None => return Err(SectionedError::Orphan { line }),
        }
    }
    Ok(sections)
}
