//! Bundled word lists backing the logical and semantic match rules.
//!
//! Each list is two whitespace-separated columns per line; `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

pub const SYNONYMS: &str = include_str!("../../data/lexicon/synonyms.txt");
pub const ANTONYMS: &str = include_str!("../../data/lexicon/antonyms.txt");
pub const BOOLEANS: &str = include_str!("../../data/lexicon/booleans.txt");
pub const SUBSTATES: &str = include_str!("../../data/lexicon/substates.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{file} line {line}: expected two columns")]
    Columns { file: String, line: usize },
    #[error("{file} line {line}: polarity must be true or false")]
    Polarity { file: String, line: usize },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    synonym_rep: BTreeMap<String, String>,
    antonyms: BTreeMap<String, BTreeSet<String>>,
    polarity: BTreeMap<String, bool>,
    parents: BTreeMap<String, BTreeSet<String>>,
}

fn pairs(file: &str, text: &str) -> Result<Vec<(String, String)>, LexiconError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(LexiconError::Columns { file: file.to_string(), line: i + 1 });
        }
        out.push((cols[0].to_lowercase(), cols[1].to_lowercase()));
    }
    Ok(out)
}

impl Lexicons {
    pub fn bundled() -> Lexicons {
        Lexicons::from_texts(SYNONYMS, ANTONYMS, BOOLEANS, SUBSTATES).expect("bundled lexicons parse")
    }

    pub fn from_texts(synonyms: &str, antonyms: &str, booleans: &str, substates: &str) -> Result<Lexicons, LexiconError> {
        let mut lex = Lexicons::default();

        // Union the synonym pairs; the smallest word of a class represents it.
        let mut classes: Vec<BTreeSet<String>> = Vec::new();
        for (a, b) in pairs("synonyms", synonyms)? {
            let hits: Vec<usize> = (0..classes.len()).filter(|&i| classes[i].contains(&a) || classes[i].contains(&b)).collect();
            let mut merged: BTreeSet<String> = [a, b].into_iter().collect();
            for &i in hits.iter().rev() {
                merged.extend(classes.remove(i));
            }
            classes.push(merged);
        }
        for class in &classes {
            let rep = class.iter().next().expect("non-empty class").clone();
            for w in class {
                lex.synonym_rep.insert(w.clone(), rep.clone());
            }
        }

        for (a, b) in pairs("antonyms", antonyms)? {
            lex.antonyms.entry(a.clone()).or_default().insert(b.clone());
            lex.antonyms.entry(b).or_default().insert(a);
        }

        for (i, (p, w)) in pairs("booleans", booleans)?.into_iter().enumerate() {
            let truth = match p.as_str() {
                "true" => true,
                "false" => false,
                _ => return Err(LexiconError::Polarity { file: "booleans".into(), line: i + 1 }),
            };
            lex.polarity.insert(w, truth);
        }

        for (parent, child) in pairs("substates", substates)? {
            lex.parents.entry(child).or_default().insert(parent);
        }
        Ok(lex)
    }

    /// Load `synonyms.txt`, `antonyms.txt`, `booleans.txt`, `substates.txt`
    /// from `dir`; a missing file falls back to the bundled list.
    pub fn from_dir(dir: &Path) -> Result<Lexicons, LexiconError> {
        let read = |name: &str, fallback: &'static str| -> Result<String, LexiconError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(fallback.to_string());
            }
            std::fs::read_to_string(&path).map_err(|source| LexiconError::Io { path: path.display().to_string(), source })
        };
        Lexicons::from_texts(
            &read("synonyms.txt", SYNONYMS)?,
            &read("antonyms.txt", ANTONYMS)?,
            &read("booleans.txt", BOOLEANS)?,
            &read("substates.txt", SUBSTATES)?,
        )
    }

    pub fn synonym_rep<'a>(&'a self, word: &'a str) -> &'a str {
        self.synonym_rep.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn are_antonyms(&self, a: &str, b: &str) -> bool {
        self.antonyms.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn antonym(&self, word: &str) -> Option<&str> {
        self.antonyms.get(word).and_then(|s| s.iter().next()).map(String::as_str)
    }

    pub fn polarity(&self, word: &str) -> Option<bool> {
        self.polarity.get(word).copied()
    }

    pub fn parents(&self, word: &str) -> impl Iterator<Item = &str> {
        self.parents.get(word).into_iter().flatten().map(String::as_str)
    }

    pub fn has_synonym(&self, word: &str) -> bool {
        self.synonym_rep.contains_key(word)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synonym_classes_merge_transitively() {
        let lex = Lexicons::bundled();
        assert_eq!(lex.synonym_rep("launch"), lex.synonym_rep("begin"));
        assert_eq!(lex.synonym_rep("start"), lex.synonym_rep("launch"));
        assert_eq!(lex.synonym_rep("unlisted"), "unlisted");
    }

    #[test]
    fn booleans_and_substates_load() {
        let lex = Lexicons::bundled();
        assert_eq!(lex.polarity("active"), Some(true));
        assert_eq!(lex.polarity("off"), Some(false));
        assert!(lex.are_antonyms("open", "closed") && lex.are_antonyms("closed", "open"));
        assert_eq!(lex.parents("ringing").collect::<Vec<_>>(), vec!["active"]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(matches!(Lexicons::from_texts("a b c", "", "", ""), Err(LexiconError::Columns { .. })));
        assert!(matches!(Lexicons::from_texts("", "", "maybe on", ""), Err(LexiconError::Polarity { .. })));
    }
}
