//! Run report: verdicts, skipped attributes, matches, metrics and CAN log,
//! as a machine record (`report.rec`) and human text (`report.txt`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::executor::{aggregate, case_signature, pass_rate, precision_recall, ApiVerdict, TestOutcome, Verdict};
use crate::ingest::{Method, TestObjectSet};
use crate::matching::{MatchOutcome, Skipped, Strictness};
use crate::rig::CanFrame;
use crate::testgen::TestCase;

pub const CAN_LOG_EXCERPT: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PropertyRef {
    pub endpoint: String,
    pub method: Method,
    pub key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub extracted: Vec<PropertyRef>,
    pub tested: Vec<PropertyRef>,
    pub skipped: Vec<PropertyRef>,
}

impl Accounting {
    /// Tested and skipped are disjoint and together equal the extracted set.
    pub fn is_partition(&self) -> bool {
        let t: BTreeSet<&PropertyRef> = self.tested.iter().collect();
        let s: BTreeSet<&PropertyRef> = self.skipped.iter().collect();
        let e: BTreeSet<&PropertyRef> = self.extracted.iter().collect();
        t.len() == self.tested.len()
            && s.len() == self.skipped.len()
            && t.is_disjoint(&s)
            && t.union(&s).copied().collect::<BTreeSet<_>>() == e
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainLine {
    pub id: String,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub results: usize,
    pub skipped: usize,
    pub by_category: BTreeMap<String, usize>,
    pub chains: Vec<ChainLine>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub pass: usize,
    pub fail: usize,
    pub error: usize,
}

impl Tally {
    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Pass => self.pass += 1,
            Verdict::Fail => self.fail += 1,
            Verdict::Error => self.error += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub pass_rate: Option<f64>,
    pub apis: Tally,
    pub cases: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: String,
    pub strictness: String,
    pub backend: String,
    pub verdicts: Vec<ApiVerdict>,
    pub outcomes: Vec<TestOutcome>,
    pub skipped: Vec<Skipped>,
    pub matches: MatchSummary,
    pub metrics: ReportMetrics,
    pub accounting: Accounting,
    pub can_log: Vec<CanFrame>,
    pub timings_ms: BTreeMap<String, f64>,
}

pub struct ReportInputs<'a> {
    pub spec: &'a str,
    pub strictness: Strictness,
    pub backend: &'a str,
    pub sets: &'a [TestObjectSet],
    pub matches: &'a MatchOutcome,
    pub gen_skipped: &'a [Skipped],
    pub cases: &'a [TestCase],
    pub outcomes: &'a [TestOutcome],
    pub can_log: &'a [CanFrame],
    pub timings_ms: BTreeMap<String, f64>,
    pub ground_truth: Option<&'a [TestCase]>,
}

pub fn build_report(i: ReportInputs) -> RunReport {
    let verdicts = aggregate(i.outcomes);
    let mut metrics = ReportMetrics { pass_rate: pass_rate(&verdicts).ok(), ..Default::default() };
    for v in &verdicts {
        metrics.apis.add(v.outcome);
    }
    for o in i.outcomes {
        metrics.cases.add(o.verdict);
    }
    if let Some(Ok(prf)) = i.ground_truth.map(|gt| precision_recall(i.cases, gt, case_signature)) {
        metrics.precision = Some(prf.precision);
        metrics.recall = Some(prf.recall);
        metrics.f1 = Some(prf.f1);
    }

    let mut skipped: Vec<Skipped> = i.matches.skipped.clone();
    skipped.extend(i.gen_skipped.iter().cloned());

    let by_id: BTreeMap<&str, PropertyRef> = i
        .matches
        .results
        .iter()
        .map(|r| (r.id.as_str(), PropertyRef { endpoint: r.endpoint.clone(), method: r.method, key: r.property.key.clone() }))
        .collect();
    let tested: BTreeSet<PropertyRef> =
        i.cases.iter().flat_map(|c| c.provenance.iter()).filter_map(|id| by_id.get(id.as_str()).cloned()).collect();
    let skipped_refs: Vec<PropertyRef> =
        skipped.iter().map(|s| PropertyRef { endpoint: s.endpoint.clone(), method: s.method, key: s.key.clone() }).collect();
    let extracted: Vec<PropertyRef> = i
        .sets
        .iter()
        .flat_map(|s| s.properties.iter().map(|p| PropertyRef { endpoint: s.endpoint.clone(), method: s.method, key: p.key.clone() }))
        .collect();

    let mut by_category: BTreeMap<String, usize> = BTreeMap::new();
    for r in &i.matches.results {
        for l in &r.links {
            *by_category.entry(l.key_chain.0.category.to_string()).or_default() += 1;
        }
    }
    let matches = MatchSummary {
        results: i.matches.results.len(),
        skipped: i.matches.skipped.len(),
        by_category,
        chains: i.matches.results.iter().map(|r| ChainLine { id: r.id.clone(), rationale: r.rationale.clone() }).collect(),
    };

    RunReport {
        spec: i.spec.to_string(),
        strictness: i.strictness.to_string(),
        backend: i.backend.to_string(),
        verdicts,
        outcomes: i.outcomes.to_vec(),
        skipped,
        matches,
        metrics,
        accounting: Accounting { extracted, tested: tested.into_iter().collect(), skipped: skipped_refs },
        can_log: i.can_log.iter().take(CAN_LOG_EXCERPT).cloned().collect(),
        timings_ms: i.timings_ms,
    }
}

/// 0 iff every judged API passed and nothing errored.
pub fn exit_code(r: &RunReport) -> i32 {
    if r.metrics.pass_rate == Some(1.0) && r.metrics.apis.error == 0 && r.metrics.cases.error == 0 {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Record,
    Human,
}

pub fn emit_report(r: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Record => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
        ReportFormat::Human => human(r),
    }
}

pub fn parse_report(text: &str) -> Result<RunReport, serde_json::Error> {
    serde_json::from_str(text)
}

fn human(r: &RunReport) -> String {
    let mut s = String::new();
    let m = &r.metrics;
    let _ = writeln!(s, "Test report for {}", r.spec);
    let _ = writeln!(s, "strictness {}, backend {}", r.strictness, r.backend);
    let _ = writeln!(s);
    let _ = writeln!(s, "== Summary");
    match m.pass_rate {
        Some(p) => {
            let _ = writeln!(s, "pass rate      {p:.4} ({} of {} APIs)", m.apis.pass, m.apis.pass + m.apis.fail);
        }
        None => {
            let _ = writeln!(s, "pass rate      n/a (no API judged)");
        }
    }
    let _ = writeln!(s, "APIs           {} pass, {} fail, {} error", m.apis.pass, m.apis.fail, m.apis.error);
    let _ = writeln!(s, "cases          {} pass, {} fail, {} error", m.cases.pass, m.cases.fail, m.cases.error);
    if let (Some(p), Some(rc), Some(f)) = (m.precision, m.recall, m.f1) {
        let _ = writeln!(s, "precision      {p:.4}\nrecall         {rc:.4}\nf1             {f:.4}");
    }
    let a = &r.accounting;
    let _ = writeln!(s, "properties     {} extracted, {} tested, {} skipped", a.extracted.len(), a.tested.len(), a.skipped.len());

    let _ = writeln!(s, "\n== API verdicts");
    for v in &r.verdicts {
        let _ = writeln!(s, "{:<5} {:<4} {} ({} cases)", v.outcome_str(), v.method, v.endpoint, v.case_outcomes.len());
    }

    let failing: Vec<&TestOutcome> = r.outcomes.iter().filter(|o| o.verdict != Verdict::Pass).collect();
    if !failing.is_empty() {
        let _ = writeln!(s, "\n== Failed and errored cases");
        for o in failing {
            let _ = writeln!(s, "{} {}", o.case_id, if o.verdict == Verdict::Fail { "FAIL" } else { "ERROR" });
            for f in &o.failed_assertions {
                let _ = writeln!(s, "    {}: expected {}, got {}", f.key, f.expected, f.actual);
            }
            if o.verdict == Verdict::Error {
                for line in o.log.lines() {
                    let _ = writeln!(s, "    {line}");
                }
            }
        }
    }

    let _ = writeln!(s, "\n== Untested attributes");
    if r.skipped.is_empty() {
        let _ = writeln!(s, "none");
    }
    for k in &r.skipped {
        let stage = serde_json::to_value(k.stage).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(s, "{} {} {}: {} at {} ({})", k.method, k.endpoint, k.key, k.reason, stage, k.detail);
    }

    let _ = writeln!(s, "\n== Matches");
    let cats: Vec<String> = r.matches.by_category.iter().map(|(c, n)| format!("{c} {n}")).collect();
    let _ = writeln!(s, "{} chains; {}", r.matches.results, if cats.is_empty() { "none".to_string() } else { cats.join(", ") });
    for c in &r.matches.chains {
        let _ = writeln!(s, "{}: {}", c.id, c.rationale);
    }

    let _ = writeln!(s, "\n== CAN log (first {} frames)", CAN_LOG_EXCERPT);
    for f in &r.can_log {
        let _ = writeln!(s, "{:>6} {} {}", f.tick, f.key, f.raw);
    }

    if !r.timings_ms.is_empty() {
        let _ = writeln!(s, "\n== Timings");
        for (stage, ms) in &r.timings_ms {
            let _ = writeln!(s, "{stage:<14} {ms:.1} ms");
        }
    }
    s
}

impl ApiVerdict {
    pub fn outcome_str(&self) -> &'static str {
        match self.outcome {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Error => "ERROR",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{SkipReason, Stage};

    #[test]
    fn empty_run_renders() {
        let r = RunReport::default();
        let text = emit_report(&r, ReportFormat::Human);
        assert!(text.contains("pass rate      n/a"));
        assert_eq!(parse_report(&emit_report(&r, ReportFormat::Record)).unwrap(), r);
        assert_eq!(exit_code(&r), 1);
        assert!(r.accounting.is_partition());
    }

    #[test]
    fn skipped_attribute_is_listed_with_reason() {
        let skipped = Skipped {
            endpoint: "/speed".into(),
            method: Method::Put,
            key: "limit".into(),
            stage: Stage::CanToVv,
            reason: SkipReason::MissingUnit,
            detail: "no unit on any side of the chain".into(),
        };
        let r = RunReport { skipped: vec![skipped], ..Default::default() };
        let text = emit_report(&r, ReportFormat::Human);
        assert!(text.contains("PUT /speed limit: missing_unit at can_to_vv"), "{text}");
    }
}
