//! Fuzzy API→CAN and CAN→VV mapping of keys and enumerated values.

pub mod assign;
pub mod lexicon;
mod pipeline;
mod rules;
pub mod score;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ValueDomain;
use crate::tables::{Alternative, Encoding};

pub use lexicon::Lexicons;
pub use pipeline::{
    map_all, map_api_to_can, map_can_to_vv, CanLink, ChainLink, MatchOutcome, MatchResult, Matcher, PartialMatch, Role,
    SkipReason, Skipped, Stage,
};
pub use rules::RuleBackend;
pub use score::{label_score, score_keys};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    #[default]
    Moderate,
    Relaxed,
}

impl Strictness {
    pub const ALL: [Strictness; 3] = [Strictness::Strict, Strictness::Moderate, Strictness::Relaxed];

    pub fn threshold(self) -> f64 {
        match self {
            Strictness::Strict => 0.95,
            Strictness::Moderate => 0.80,
            Strictness::Relaxed => 0.60,
        }
    }

    /// Assignment tiers, highest first, down to this level's threshold.
    pub fn tiers(self) -> Vec<f64> {
        Strictness::ALL.iter().take_while(|s| **s <= self).map(|s| s.threshold()).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strictness::Strict => "strict",
            Strictness::Moderate => "moderate",
            Strictness::Relaxed => "relaxed",
        }
    }
}

impl fmt::Display for Strictness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strictness {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Strictness::Strict),
            "moderate" => Ok(Strictness::Moderate),
            "relaxed" => Ok(Strictness::Relaxed),
            _ => Err(format!("unknown strictness {s:?} (strict|moderate|relaxed)")),
        }
    }
}

/// Match categories in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Exact,
    Format,
    Spelling,
    Abbreviation,
    Logical,
    Semantic,
    Pseudocode,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Exact,
        Category::Format,
        Category::Spelling,
        Category::Abbreviation,
        Category::Logical,
        Category::Semantic,
        Category::Pseudocode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Exact => "exact",
            Category::Format => "format",
            Category::Spelling => "spelling",
            Category::Abbreviation => "abbreviation",
            Category::Logical => "logical",
            Category::Semantic => "semantic",
            Category::Pseudocode => "pseudocode",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub left_key: String,
    pub right_key: String,
    pub category: Category,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPair {
    pub left: String,
    pub right: String,
    pub category: Category,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueMapping {
    pub pairs: Vec<LabelPair>,
    pub residual_left: Vec<String>,
    pub residual_right: Vec<String>,
}

impl ValueMapping {
    pub fn from_pairs(pairs: Vec<LabelPair>, left: &[String], right: &[String]) -> ValueMapping {
        let used_l: BTreeSet<&str> = pairs.iter().map(|p| p.left.as_str()).collect();
        let used_r: BTreeSet<&str> = pairs.iter().map(|p| p.right.as_str()).collect();
        let residual_left = left.iter().filter(|l| !used_l.contains(l.as_str())).cloned().collect();
        let residual_right = right.iter().filter(|r| !used_r.contains(r.as_str())).cloned().collect();
        ValueMapping { pairs, residual_left, residual_right }
    }

    /// Right labels paired with `left`, best first.
    pub fn rights_for(&self, left: &str) -> Vec<&str> {
        self.pairs.iter().filter(|p| p.left == left).map(|p| p.right.as_str()).collect()
    }

    pub fn lefts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.pairs {
            if !out.contains(&p.left.as_str()) {
                out.push(&p.left);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAlternative {
    pub alternative: Alternative,
    pub category: Category,
    pub score: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("schema violation after {attempts} attempts: {violation}")]
    SchemaViolation { attempts: u32, violation: String },
    #[error("replay store has no response for request {0}")]
    ReplayMiss(String),
    #[error("backend answer rejected: {0}")]
    Invalid(String),
}

/// One entry point per matching task. Implementations must be pure
/// functions of their arguments for reports to be reproducible.
pub trait MatcherBackend: Send + Sync {
    fn name(&self) -> &str;
    fn match_keys(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<MatchCandidate>, BackendError>;
    fn match_labels(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<LabelPair>, BackendError>;
    fn match_pseudocode(
        &self,
        left: &Alternative,
        alts: &[Alternative],
        strictness: Strictness,
    ) -> Result<Vec<ScoredAlternative>, BackendError>;
    fn infer_unit(&self, key: &str, description: Option<&str>) -> Result<Option<String>, BackendError>;
}

fn check_score(score: f64, strictness: Strictness, what: &str) -> Result<(), BackendError> {
    if !(0.0..=1.0).contains(&score) || score < strictness.threshold() {
        return Err(BackendError::Invalid(format!("{what}: score {score} outside [{}, 1]", strictness.threshold())));
    }
    Ok(())
}

/// One-to-one key assignment; backend output is checked before use.
pub fn match_keys(
    left: &[String],
    right: &[String],
    strictness: Strictness,
    backend: &dyn MatcherBackend,
) -> Result<Vec<MatchCandidate>, BackendError> {
    if left.is_empty() || right.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = backend.match_keys(left, right, strictness)?;
    let mut seen_l = BTreeSet::new();
    let mut seen_r = BTreeSet::new();
    for c in &out {
        if !left.contains(&c.left_key) || !right.contains(&c.right_key) {
            return Err(BackendError::Invalid(format!("unknown key in pair {} → {}", c.left_key, c.right_key)));
        }
        if !seen_l.insert(c.left_key.as_str()) || !seen_r.insert(c.right_key.as_str()) {
            return Err(BackendError::Invalid(format!("key reused in pair {} → {}", c.left_key, c.right_key)));
        }
        check_score(c.score, strictness, &c.left_key)?;
    }
    out.sort_by_key(|c| left.iter().position(|l| *l == c.left_key));
    Ok(out)
}

/// One-to-one label pairing between explicit label lists.
pub fn match_labels(
    left: &[String],
    right: &[String],
    strictness: Strictness,
    backend: &dyn MatcherBackend,
) -> Result<ValueMapping, BackendError> {
    if left.is_empty() || right.is_empty() {
        return Ok(ValueMapping::from_pairs(Vec::new(), left, right));
    }
    let mut pairs = backend.match_labels(left, right, strictness)?;
    let mut seen_l = BTreeSet::new();
    let mut seen_r = BTreeSet::new();
    for p in &pairs {
        if !left.contains(&p.left) || !right.contains(&p.right) {
            return Err(BackendError::Invalid(format!("unknown label in pair {} → {}", p.left, p.right)));
        }
        if !seen_l.insert(p.left.as_str()) || !seen_r.insert(p.right.as_str()) {
            return Err(BackendError::Invalid(format!("label reused in pair {} → {}", p.left, p.right)));
        }
        check_score(p.score, strictness, &p.left)?;
    }
    pairs.sort_by_key(|p| left.iter().position(|l| *l == p.left));
    Ok(ValueMapping::from_pairs(pairs, left, right))
}

pub fn match_values(
    left_domain: &ValueDomain,
    right_encoding: &Encoding,
    strictness: Strictness,
    backend: &dyn MatcherBackend,
) -> Result<ValueMapping, BackendError> {
    let left = left_domain.labels().unwrap_or_default();
    let right: Vec<String> = right_encoding.labels().map(str::to_string).collect();
    match_labels(&left, &right, strictness, backend)
}

/// Alternatives of a pseudocode cell that satisfy `left`, best first.
pub fn match_pseudocode(
    left: &Alternative,
    alts: &[Alternative],
    strictness: Strictness,
    backend: &dyn MatcherBackend,
) -> Result<Vec<ScoredAlternative>, BackendError> {
    if alts.is_empty() {
        return Ok(Vec::new());
    }
    let out = backend.match_pseudocode(left, alts, strictness)?;
    let mut seen = BTreeSet::new();
    for sa in &out {
        if !alts.contains(&sa.alternative) || !seen.insert(&sa.alternative) {
            return Err(BackendError::Invalid(format!("alternative {}:{} not offered", sa.alternative.key, sa.alternative.label)));
        }
        check_score(sa.score, strictness, &sa.alternative.label)?;
    }
    if strictness == Strictness::Strict && out.len() > 1 {
        return Err(BackendError::Invalid("strict pseudocode match returned several alternatives".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::parse_pseudocode;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn table_rows_pair_up_at_moderate() {
        let b = RuleBackend::bundled();
        let left = s(&["DriverTimeSetting", "standard_mode", "OFF", "standard", "AutoStart"]);
        let right = s(&["AutoLaunch", "STD", "NOT_ON", "STANDARDMODE", "DriverTimeSeting"]);
        let got = match_keys(&left, &right, Strictness::Moderate, &b).unwrap();
        let pairs: Vec<(&str, &str)> = got.iter().map(|c| (c.left_key.as_str(), c.right_key.as_str())).collect();
        assert_eq!(
            pairs,
            vec![
                ("DriverTimeSetting", "DriverTimeSeting"),
                ("standard_mode", "STANDARDMODE"),
                ("OFF", "NOT_ON"),
                ("standard", "STD"),
                ("AutoStart", "AutoLaunch"),
            ]
        );
    }

    #[test]
    fn nonsense_keys_do_not_match() {
        let b = RuleBackend::bundled();
        let got = match_keys(&s(&["qzxv", "plmokn"]), &s(&["acMode", "fanSpeed"]), Strictness::Relaxed, &b).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn boolean_domain_pairs_with_active_inactive() {
        let b = RuleBackend::bundled();
        let enc = Encoding(vec![("Active".into(), 1), ("Inactive".into(), 0)]);
        let m = match_values(&ValueDomain::Boolean, &enc, Strictness::Moderate, &b).unwrap();
        let pairs: Vec<(&str, &str)> = m.pairs.iter().map(|p| (p.left.as_str(), p.right.as_str())).collect();
        assert_eq!(pairs, vec![("TRUE", "Active"), ("FALSE", "Inactive")]);
        assert!(m.residual_left.is_empty() && m.residual_right.is_empty());
    }

    #[test]
    fn extra_mode_is_residual() {
        let b = RuleBackend::bundled();
        let dom = ValueDomain::Enumeration { labels: s(&["STANDARD", "ECONOMY"]) };
        let enc = Encoding(vec![("STANDARD".into(), 0), ("ECONOMY".into(), 1), ("TURBO".into(), 2)]);
        let m = match_values(&dom, &enc, Strictness::Strict, &b).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.residual_right, s(&["TURBO"]));
    }

    #[test]
    fn pseudocode_strictness_levels() {
        let b = RuleBackend::bundled();
        let alts = parse_pseudocode("AlarmClockStat:Active OR AlarmClockStat:Ringing OR AlarmClockStat:Snoozed")
            .unwrap()
            .alternatives;
        let left = Alternative { key: "AlarmActive".into(), label: "True".into() };
        let relaxed = match_pseudocode(&left, &alts, Strictness::Relaxed, &b).unwrap();
        assert_eq!(relaxed.len(), 3);
        let strict = match_pseudocode(&left, &alts, Strictness::Strict, &b).unwrap();
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].alternative.label, "Active");
        let nothing = Alternative { key: "AlarmActive".into(), label: "Purple".into() };
        assert!(match_pseudocode(&nothing, &alts, Strictness::Relaxed, &b).unwrap().is_empty());
    }

    #[test]
    fn tiers_nest() {
        assert_eq!(Strictness::Strict.tiers(), vec![0.95]);
        assert_eq!(Strictness::Relaxed.tiers(), vec![0.95, 0.80, 0.60]);
        assert!(Strictness::Strict < Strictness::Moderate && Strictness::Moderate < Strictness::Relaxed);
    }
}
