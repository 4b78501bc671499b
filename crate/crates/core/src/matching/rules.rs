//! Deterministic rule-based matcher: lexicon scoring plus tiered assignment.

use std::sync::Arc;

use super::assign::{tiered_assignment, Cell};
use super::score::{label_score, score_keys, tokens};
use super::{BackendError, Category, LabelPair, Lexicons, MatchCandidate, MatcherBackend, ScoredAlternative, Strictness};
use crate::tables::Alternative;
use crate::units::UnitRegistry;

#[derive(Debug, Clone)]
pub struct RuleBackend {
    lex: Arc<Lexicons>,
    units: Arc<UnitRegistry>,
}

type Scorer = fn(&str, &str, &Lexicons) -> Option<(Category, f64)>;

impl RuleBackend {
    pub fn new(lex: Lexicons, units: UnitRegistry) -> RuleBackend {
        RuleBackend { lex: Arc::new(lex), units: Arc::new(units) }
    }

    pub fn bundled() -> RuleBackend {
        RuleBackend::new(Lexicons::bundled(), UnitRegistry::bundled())
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lex
    }

    fn assign(&self, left: &[String], right: &[String], strictness: Strictness, scorer: Scorer) -> Vec<(usize, usize, Cell)> {
        let floor = strictness.threshold();
        let cells: Vec<Vec<Option<Cell>>> = left
            .iter()
            .map(|l| {
                right
                    .iter()
                    .map(|r| scorer(l, r, &self.lex).filter(|(_, s)| *s >= floor).map(|(category, score)| Cell { category, score }))
                    .collect()
            })
            .collect();
        let names: Vec<&str> = right.iter().map(String::as_str).collect();
        tiered_assignment(&cells, &names, &strictness.tiers())
            .into_iter()
            .map(|(i, j)| (i, j, cells[i][j].expect("assigned cell is scored")))
            .collect()
    }
}

impl MatcherBackend for RuleBackend {
    fn name(&self) -> &str {
        "rules"
    }

    fn match_keys(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<MatchCandidate>, BackendError> {
        Ok(self
            .assign(left, right, strictness, score_keys)
            .into_iter()
            .map(|(i, j, c)| MatchCandidate {
                left_key: left[i].clone(),
                right_key: right[j].clone(),
                category: c.category,
                score: c.score,
            })
            .collect())
    }

    fn match_labels(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<LabelPair>, BackendError> {
        Ok(self
            .assign(left, right, strictness, label_score)
            .into_iter()
            .map(|(i, j, c)| LabelPair { left: left[i].clone(), right: right[j].clone(), category: c.category, score: c.score })
            .collect())
    }

    fn match_pseudocode(
        &self,
        left: &Alternative,
        alts: &[Alternative],
        strictness: Strictness,
    ) -> Result<Vec<ScoredAlternative>, BackendError> {
        let mut scored: Vec<ScoredAlternative> = alts
            .iter()
            .filter_map(|a| {
                label_score(&left.label, &a.label, &self.lex)
                    .filter(|(_, s)| *s >= strictness.threshold())
                    .map(|(category, score)| ScoredAlternative { alternative: a.clone(), category, score })
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.category.cmp(&b.category)));
        if strictness == Strictness::Strict {
            scored.truncate(1);
        }
        Ok(scored)
    }

    fn infer_unit(&self, key: &str, description: Option<&str>) -> Result<Option<String>, BackendError> {
        let from_desc = description.and_then(|d| self.units.scan_text(d));
        let unit = from_desc.or_else(|| self.units.scan_text(&tokens(key).join(" ")));
        Ok(unit.map(|u| u.canonical_name))
    }
}
