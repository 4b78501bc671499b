//! Plan execution against a rig, verdict aggregation and metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ingest::Method;
use crate::rig::{CallError, RigApi, RigClient};
use crate::testgen::{format_raw, parse_test_plan, ApiValue, GenError, TestCase};

/// Absolute tolerance for numeric comparisons after unit conversion.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no API verdict with a pass or fail outcome")]
    EmptyInput,
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAssertion {
    pub key: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub case_id: String,
    pub endpoint: String,
    pub method: Method,
    pub verdict: Verdict,
    pub failed_assertions: Vec<FailedAssertion>,
    pub log: String,
}

struct Run<'a> {
    case: &'a TestCase,
    log: Vec<String>,
    failed: Vec<FailedAssertion>,
    error: Option<String>,
}

impl Run<'_> {
    fn infra(&mut self, what: &str, e: CallError) {
        self.log.push(format!("{what}: {e}"));
        self.error = Some(e.to_string());
    }

    fn finish(self) -> TestOutcome {
        let verdict = if self.error.is_some() {
            Verdict::Error
        } else if self.failed.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        TestOutcome {
            case_id: self.case.id.clone(),
            endpoint: self.case.endpoint.clone(),
            method: self.case.method,
            verdict,
            failed_assertions: self.failed,
            log: self.log.join("\n"),
        }
    }
}

fn raw_matches(expected: f64, actual: f64) -> bool {
    (expected - actual).abs() <= TOLERANCE
}

fn value_matches(expected: &ApiValue, actual: &Value) -> bool {
    match serde_json::from_value::<ApiValue>(actual.clone()) {
        Ok(a) => expected.matches(&a, TOLERANCE),
        Err(_) => false,
    }
}

/// PUT cases check the written VV raw, GET cases check the decoded response. Gateway rejections are API
/// failures; anything that stops the check itself is an error.
pub fn run_case(case: &TestCase, rig: &dyn RigApi) -> TestOutcome {
    let mut run = Run { case, log: Vec::new(), failed: Vec::new(), error: None };
    match case.method {
        Method::Put => {
            let body: Map<String, Value> =
                case.api_payload.iter().map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("value serializes"))).collect();
            run.log.push(format!("PUT {} {}", case.endpoint, Value::Object(body.clone())));
            match rig.put(&case.endpoint, &body) {
                Err(CallError::Rejected { status, message }) => {
                    run.log.push(format!("rejected {status}: {message}"));
                    run.failed.push(FailedAssertion { key: "status".into(), expected: "2xx".into(), actual: status.to_string() });
                    return run.finish();
                }
                Err(e) => {
                    run.infra("PUT", e);
                    return run.finish();
                }
                Ok(()) => {}
            }
            for (k, want) in &case.expected_vv {
                match rig.vv_get(k) {
                    Ok(got) => {
                        run.log.push(format!("VV {k} = {}", format_raw(got)));
                        if !raw_matches(*want, got) {
                            run.failed.push(FailedAssertion { key: k.clone(), expected: format_raw(*want), actual: format_raw(got) });
                        }
                    }
                    Err(e) => {
                        run.infra(&format!("VV read {k}"), e);
                        return run.finish();
                    }
                }
            }
        }
        Method::Get => {
            for (k, raw) in &case.vv_preset {
                run.log.push(format!("VV_SET {k} {}", format_raw(*raw)));
                if let Err(e) = rig.vv_set(k, *raw) {
                    run.infra(&format!("VV write {k}"), e);
                    return run.finish();
                }
            }
            let body = match rig.get(&case.endpoint) {
                Ok(b) => b,
                Err(CallError::Rejected { status, message }) => {
                    run.log.push(format!("rejected {status}: {message}"));
                    run.failed.push(FailedAssertion { key: "status".into(), expected: "2xx".into(), actual: status.to_string() });
                    return run.finish();
                }
                Err(e) => {
                    run.infra("GET", e);
                    return run.finish();
                }
            };
            run.log.push(format!("GET {} -> {}", case.endpoint, Value::Object(body.clone())));
            for (k, want) in &case.expected_api {
                let got = body.get(k);
                if !got.is_some_and(|g| value_matches(want, g)) {
                    run.failed.push(FailedAssertion {
                        key: k.clone(),
                        expected: want.to_json(),
                        actual: got.map_or("<missing>".to_string(), Value::to_string),
                    });
                }
            }
        }
    }
    run.finish()
}

/// Cases run one after another: they share one VV table.
pub fn run_cases(cases: &[TestCase], rig: &dyn RigApi) -> Vec<TestOutcome> {
    cases.iter().map(|c| run_case(c, rig)).collect()
}

/// Parse a plan and execute it against the rig at `rig_address`.
pub fn run_plan(plan: &str, rig_address: &str) -> Result<Vec<TestOutcome>, GenError> {
    let plan = parse_test_plan(plan)?;
    let client = RigClient::new(rig_address);
    Ok(run_cases(&plan.cases, &client))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiVerdict {
    pub endpoint: String,
    pub method: Method,
    pub outcome: Verdict,
    pub case_outcomes: Vec<String>,
}

/// Per-API outcome: pass iff every case passed; any failing case fails the
/// API; otherwise infrastructure errors make the API an error.
pub fn aggregate(outcomes: &[TestOutcome]) -> Vec<ApiVerdict> {
    let mut groups: BTreeMap<(String, Method), Vec<&TestOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.endpoint.clone(), o.method)).or_default().push(o);
    }
    groups
        .into_iter()
        .map(|((endpoint, method), os)| {
            let outcome = if os.iter().any(|o| o.verdict == Verdict::Fail) {
                Verdict::Fail
            } else if os.iter().any(|o| o.verdict == Verdict::Error) {
                Verdict::Error
            } else {
                Verdict::Pass
            };
            ApiVerdict { endpoint, method, outcome, case_outcomes: os.iter().map(|o| o.case_id.clone()).collect() }
        })
        .collect()
}

/// Passing APIs over APIs with a pass or fail outcome; errors are excluded.
pub fn pass_rate(verdicts: &[ApiVerdict]) -> Result<f64, MetricsError> {
    let judged: Vec<&ApiVerdict> = verdicts.iter().filter(|v| v.outcome != Verdict::Error).collect();
    if judged.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let passed = judged.iter().filter(|v| v.outcome == Verdict::Pass).count();
    Ok(passed as f64 / judged.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub generated: usize,
    pub ground_truth: usize,
}

impl Prf {
    /// An empty generated set has no wrong members: precision 1.
    pub fn from_counts(tp: usize, generated: usize, ground_truth: usize) -> Prf {
        let precision = if generated == 0 { 1.0 } else { tp as f64 / generated as f64 };
        let recall = if ground_truth == 0 { 1.0 } else { tp as f64 / ground_truth as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1, true_positives: tp, generated, ground_truth }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pass_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn canon_value(v: &ApiValue) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.6}"),
        None => v.to_json(),
    }
}

/// Comparable signature of a case: method, endpoint and sorted maps with
/// numbers normalised to six decimals. The id is not part of it.
pub fn case_signature(c: &TestCase) -> String {
    let api = |m: &BTreeMap<String, ApiValue>| m.iter().map(|(k, v)| format!("{k}={}", canon_value(v))).collect::<Vec<_>>().join(",");
    let raw = |m: &BTreeMap<String, f64>| m.iter().map(|(k, v)| format!("{k}={v:.6}")).collect::<Vec<_>>().join(",");
    format!(
        "{} {} payload[{}] preset[{}] vv[{}] api[{}]",
        c.method,
        c.endpoint,
        api(&c.api_payload),
        raw(&c.vv_preset),
        raw(&c.expected_vv),
        api(&c.expected_api)
    )
}

pub fn precision_recall(
    generated: &[TestCase],
    ground_truth: &[TestCase],
    key_fn: impl Fn(&TestCase) -> String,
) -> Result<Prf, MetricsError> {
    if ground_truth.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let gen: BTreeSet<String> = generated.iter().map(&key_fn).collect();
    let gt: BTreeSet<String> = ground_truth.iter().map(&key_fn).collect();
    let tp = gen.intersection(&gt).count();
    Ok(Prf::from_counts(tp, gen.len(), gt.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{FaultSpec, Rig, RigConfig};
    use serde_json::json;

    fn rig_config() -> RigConfig {
        serde_json::from_value(json!({
            "endpoints": [{"path": "/climate", "methods": ["PUT", "GET"], "properties": [
                {"key": "acMode", "codec": "enum", "can_key": "acMode_CAN",
                 "write": {"STANDARD": 0, "ECONOMY": 1}, "read": [[0, "STANDARD"], [1, "ECONOMY"]]}]}],
            "vv_bindings": [{"can_key": "acMode_CAN", "vv_key": "acMode", "enum_map": [[0, 0.0], [1, 2.0]]}]
        }))
        .unwrap()
    }

    fn put(label: &str, raw: f64) -> TestCase {
        TestCase {
            id: format!("put.{label}"),
            method: Method::Put,
            endpoint: "/climate".into(),
            api_payload: BTreeMap::from([("acMode".into(), ApiValue::Text(label.into()))]),
            vv_preset: BTreeMap::new(),
            expected_vv: BTreeMap::from([("acMode".into(), raw)]),
            expected_api: BTreeMap::new(),
            provenance: vec![],
        }
    }

    fn get(label: &str, raw: f64) -> TestCase {
        TestCase {
            id: format!("get.{label}"),
            method: Method::Get,
            endpoint: "/climate".into(),
            api_payload: BTreeMap::new(),
            vv_preset: BTreeMap::from([("acMode".into(), raw)]),
            expected_vv: BTreeMap::new(),
            expected_api: BTreeMap::from([("acMode".into(), ApiValue::Text(label.into()))]),
            provenance: vec![],
        }
    }

    fn suite() -> Vec<TestCase> {
        vec![put("STANDARD", 0.0), put("ECONOMY", 2.0), get("STANDARD", 0.0), get("ECONOMY", 2.0)]
    }

    #[test]
    fn clean_rig_passes_everything() {
        let rig = Rig::new(rig_config()).unwrap();
        let out = run_cases(&suite(), &rig);
        assert!(out.iter().all(|o| o.verdict == Verdict::Pass), "{out:?}");
        assert_eq!(pass_rate(&aggregate(&out)).unwrap(), 1.0);
    }

    #[test]
    fn swapped_enum_fails_with_assertion() {
        let rig = Rig::new(rig_config()).unwrap();
        rig.inject_fault(FaultSpec::SwappedEnum { endpoint: "/climate".into(), label_a: "STANDARD".into(), label_b: "ECONOMY".into() })
            .unwrap();
        let out = run_cases(&suite(), &rig);
        assert_eq!(out[0].verdict, Verdict::Fail);
        assert_eq!(out[0].failed_assertions[0], FailedAssertion { key: "acMode".into(), expected: "0".into(), actual: "2".into() });
        let v = aggregate(&out);
        assert!(v.iter().all(|v| v.outcome == Verdict::Fail));
    }

    #[test]
    fn unreachable_rig_is_error_not_fail() {
        let client = RigClient::new("http://127.0.0.1:9");
        let out = run_cases(&suite(), &client);
        assert!(out.iter().all(|o| o.verdict == Verdict::Error));
        assert_eq!(pass_rate(&aggregate(&out)), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn pass_rate_counts_apis() {
        let v = |outcome| ApiVerdict { endpoint: "/x".into(), method: Method::Get, outcome, case_outcomes: vec![] };
        let mut vs: Vec<ApiVerdict> = (0..40).map(|_| v(Verdict::Pass)).collect();
        vs.push(v(Verdict::Fail));
        assert!((pass_rate(&vs).unwrap() - 40.0 / 41.0).abs() < 1e-12);
        vs.push(v(Verdict::Error));
        assert!((pass_rate(&vs).unwrap() - 40.0 / 41.0).abs() < 1e-12);
        assert_eq!(pass_rate(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn precision_recall_counting() {
        let gt = suite();
        let m = precision_recall(&gt, &gt, case_signature).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let mut gen = gt.clone();
        gen.push(put("TURBO", 3.0));
        let m = precision_recall(&gen, &gt, case_signature).unwrap();
        assert_eq!((m.precision, m.recall), (0.8, 1.0));
        assert_eq!(precision_recall(&gen, &[], case_signature), Err(MetricsError::EmptyGroundTruth));
    }

    #[test]
    fn signature_ignores_id_and_number_spelling() {
        let mut a = put("STANDARD", 0.0);
        let mut b = a.clone();
        b.id = "other".into();
        a.api_payload.insert("n".into(), ApiValue::Int(5));
        b.api_payload.insert("n".into(), ApiValue::Number(5.0));
        assert_eq!(case_signature(&a), case_signature(&b));
    }
}
