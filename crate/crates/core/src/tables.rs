//! CAN signal table and Virtual Vehicle table.
//!
//! Both tables are pipe-delimited text, one record per line, `#` comments:
//!
//! ```text
//! # key | endpoint_hint | unit | encoding | pseudocode
//! acMode_CAN | Climate | | STANDARD=0;ECONOMY=1;TURBO=2 |
//! # key | bound_can_key | unit | encoding
//! acMode | acMode_CAN | | STANDARD=0;ECONOMY=2;TURBO=3
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("pseudocode {0:?} does not match `key:label (OR key:label)*`")]
    Grammar(String),
}

/// Ordered label → raw integer map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding(pub Vec<(String, i64)>);

impl Encoding {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(l, _)| l.as_str())
    }

    pub fn raw(&self, label: &str) -> Option<i64> {
        self.0.iter().find(|(l, _)| l == label).map(|(_, r)| *r)
    }

    pub fn label(&self, raw: i64) -> Option<&str> {
        self.0.iter().find(|(_, r)| *r == raw).map(|(l, _)| l.as_str())
    }

    fn parse(cell: &str, line: usize, distinct_raws: bool) -> Result<Self, TableError> {
        let mut pairs: Vec<(String, i64)> = Vec::new();
        for item in cell.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (label, raw) = item.split_once('=').ok_or_else(|| TableError::Syntax {
                line,
                message: format!("encoding item {item:?} is not LABEL=INT"),
            })?;
            let label = label.trim();
            let raw: i64 = raw.trim().parse().map_err(|_| TableError::Syntax {
                line,
                message: format!("encoding value {raw:?} is not an integer"),
            })?;
            if label.is_empty() || pairs.iter().any(|(l, _)| l == label) {
                return Err(TableError::Syntax { line, message: format!("duplicate or empty label {label:?}") });
            }
            if distinct_raws && pairs.iter().any(|(_, r)| *r == raw) {
                return Err(TableError::Syntax { line, message: format!("duplicate raw value {raw}") });
            }
            pairs.push((label.to_string(), raw));
        }
        Ok(Encoding(pairs))
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (label, raw)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{label}={raw}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanSignal {
    pub key: String,
    pub endpoint_hint: String,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudocode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvEntry {
    pub key: String,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_can_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_text: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CanTable {
    pub signals: Vec<CanSignal>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VvTable {
    pub entries: Vec<VvEntry>,
}

impl CanTable {
    pub fn get(&self, key: &str) -> Option<&CanSignal> {
        self.signals.iter().find(|s| s.key == key)
    }
}

impl VvTable {
    pub fn get(&self, key: &str) -> Option<&VvEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn bound_to(&self, can_key: &str) -> Option<&VvEntry> {
        self.entries.iter().find(|e| e.bound_can_key.as_deref() == Some(can_key))
    }
}

fn opt(cell: &str) -> Option<String> {
    let t = cell.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn records(document: &str, arity: usize) -> impl Iterator<Item = Result<(usize, Vec<&str>), TableError>> {
    document.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        if cells.len() != arity {
            return Some(Err(TableError::Syntax {
                line: i + 1,
                message: format!("expected {arity} fields, found {}", cells.len()),
            }));
        }
        if cells[0].is_empty() {
            return Some(Err(TableError::Syntax { line: i + 1, message: "empty key".into() }));
        }
        Some(Ok((i + 1, cells)))
    })
}

pub fn parse_can_table(document: &str) -> Result<CanTable, TableError> {
    let mut signals: Vec<CanSignal> = Vec::new();
    for rec in records(document, 5) {
        let (line, c) = rec?;
        if signals.iter().any(|s| s.key == c[0]) {
            return Err(TableError::DuplicateKey(c[0].to_string()));
        }
        signals.push(CanSignal {
            key: c[0].to_string(),
            endpoint_hint: c[1].to_string(),
            unit_text: opt(c[2]),
            encoding: Encoding::parse(c[3], line, true)?,
            pseudocode: opt(c[4]),
        });
    }
    Ok(CanTable { signals })
}

pub fn parse_vv_table(document: &str) -> Result<VvTable, TableError> {
    let mut entries: Vec<VvEntry> = Vec::new();
    for rec in records(document, 4) {
        let (line, c) = rec?;
        if entries.iter().any(|e| e.key == c[0]) {
            return Err(TableError::DuplicateKey(c[0].to_string()));
        }
        entries.push(VvEntry {
            key: c[0].to_string(),
            bound_can_key: opt(c[1]),
            unit_text: opt(c[2]),
            encoding: Encoding::parse(c[3], line, false)?,
        });
    }
    Ok(VvTable { entries })
}

pub fn serialize_can_table(table: &CanTable) -> String {
    let mut out = String::from("# key | endpoint_hint | unit | encoding | pseudocode\n");
    for s in &table.signals {
        out.push_str(&format!(
            "{} | {} | {} | {} | {}\n",
            s.key,
            s.endpoint_hint,
            s.unit_text.as_deref().unwrap_or(""),
            s.encoding,
            s.pseudocode.as_deref().unwrap_or("")
        ));
    }
    out
}

pub fn serialize_vv_table(table: &VvTable) -> String {
    let mut out = String::from("# key | bound_can_key | unit | encoding\n");
    for e in &table.entries {
        out.push_str(&format!(
            "{} | {} | {} | {}\n",
            e.key,
            e.bound_can_key.as_deref().unwrap_or(""),
            e.unit_text.as_deref().unwrap_or(""),
            e.encoding
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alternative {
    pub key: String,
    pub label: String,
}

/// Alternatives of an informal `key:label OR key:label` cell, in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudocodeAlternatives {
    pub alternatives: Vec<Alternative>,
}

impl fmt::Display for PseudocodeAlternatives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, alt) in self.alternatives.iter().enumerate() {
            if i > 0 {
                f.write_str(" OR ")?;
            }
            write!(f, "{}:{}", alt.key, alt.label)?;
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq)]
enum Token<'a> {
    Ident(&'a str),
    Colon,
    Or,
}

fn tokenize(expr: &str) -> Option<Vec<Token<'_>>> {
    let mut tokens = Vec::new();
    let bytes = expr.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == ':' {
            tokens.push(Token::Colon);
            i += 1;
        } else if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                    i += 1;
                } else {
                    break;
                }
            }
            let word = &expr[start..i];
            tokens.push(if word == "OR" { Token::Or } else { Token::Ident(word) });
        } else {
            return None;
        }
    }
    Some(tokens)
}

pub fn parse_pseudocode(expr: &str) -> Result<PseudocodeAlternatives, TableError> {
    let err = || TableError::Grammar(expr.to_string());
    let tokens = tokenize(expr).ok_or_else(err)?;
    let mut alternatives: Vec<Alternative> = Vec::new();
    let mut it = tokens.iter();
    loop {
        match (it.next(), it.next(), it.next()) {
            (Some(Token::Ident(k)), Some(Token::Colon), Some(Token::Ident(l))) => {
                let alt = Alternative { key: k.to_string(), label: l.to_string() };
                if alternatives.contains(&alt) {
                    return Err(err());
                }
                alternatives.push(alt);
            }
            _ => return Err(err()),
        }
        match it.next() {
            None => break,
            Some(Token::Or) => continue,
            Some(_) => return Err(err()),
        }
    }
    Ok(PseudocodeAlternatives { alternatives })
}

fn fold_hint(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// Signals whose endpoint hint names the endpoint, in table order.
pub fn lookup_candidates<'t>(endpoint_path: &str, table: &'t CanTable) -> Vec<&'t CanSignal> {
    let target = fold_hint(endpoint_path);
    table.signals.iter().filter(|s| fold_hint(&s.endpoint_hint) == target).collect()
}
