//! PUT/GET test cases from completed match chains, and the plan script format.
//!
//! A plan is one step per line, each prefixed by its case id:
//!
//! ```text
//! SETUP rig http://127.0.0.1:8080
//! SETUP endpoint /climate
//! climate.put.acMode.0 CASE PUT /climate from=climate.put.acMode
//! climate.put.acMode.0 PUT /climate {"acMode":"STANDARD"}
//! climate.put.acMode.0 VV_EXPECT acMode 0
//! climate.get.acMode.0 CASE GET /climate from=climate.get.acMode
//! climate.get.acMode.0 VV_SET acMode 2
//! climate.get.acMode.0 GET /climate
//! climate.get.acMode.0 API_EXPECT acMode "ECONOMY"
//! ```

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DeclaredType, Method, ValueDomain};
use crate::matching::{MatchResult, Role, SkipReason, Skipped, Stage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("no target for the {0:?} role")]
    RoleMissing(Role),
    #[error("plan line {line}: {message}")]
    Plan { line: usize, message: String },
}

/// A value as it appears in an API body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ApiValue {
    Bool(bool),
    Int(i64),
    Number(f64),
    Text(String),
}

impl ApiValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ApiValue::Int(i) => Some(*i as f64),
            ApiValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("api value serializes")
    }

    /// Equal, with numbers compared within `tol`.
    pub fn matches(&self, other: &ApiValue, tol: f64) -> bool {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => (a - b).abs() <= tol,
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub method: Method,
    pub endpoint: String,
    #[serde(default)]
    pub api_payload: BTreeMap<String, ApiValue>,
    #[serde(default)]
    pub vv_preset: BTreeMap<String, f64>,
    #[serde(default)]
    pub expected_vv: BTreeMap<String, f64>,
    #[serde(default)]
    pub expected_api: BTreeMap<String, ApiValue>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeOverride {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Per-property numeric range, keyed by property key.
    #[serde(default)]
    pub ranges: BTreeMap<String, RangeOverride>,
}

/// Datetime samples: start of day, mid-day, end of day.
pub const TIME_SAMPLES: [(u32, u32); 3] = [(0, 0), (11, 59), (23, 59)];

pub fn format_api_datetime(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_api_datetime(text: &str) -> Option<NaiveDateTime> {
    DateTime::parse_from_rfc3339(text)
        .map(|d| d.naive_utc())
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S").ok())
}

/// Split a datetime over hour/minute targets.
pub fn decompose_datetime(value: &NaiveDateTime, targets: &[(String, Role)]) -> Result<BTreeMap<String, i64>, GenError> {
    let mut out = BTreeMap::new();
    for role in [Role::Hours, Role::Minutes] {
        let (key, _) = targets.iter().find(|(_, r)| *r == role).ok_or(GenError::RoleMissing(role))?;
        let v = if role == Role::Hours { value.hour() } else { value.minute() };
        out.insert(key.clone(), v as i64);
    }
    Ok(out)
}

/// Inverse of [`decompose_datetime`] on a given date.
pub fn recompose_datetime(date: NaiveDate, hours: i64, minutes: i64) -> Option<NaiveDateTime> {
    let t = NaiveTime::from_hms_opt(u32::try_from(hours).ok()?, u32::try_from(minutes).ok()?, 0)?;
    Some(date.and_time(t))
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

fn label_value(domain: &ValueDomain, label: &str) -> ApiValue {
    match domain {
        ValueDomain::Boolean => ApiValue::Bool(label.eq_ignore_ascii_case("true")),
        _ => ApiValue::Text(label.to_string()),
    }
}

fn numeric_value(declared: DeclaredType, x: f64) -> ApiValue {
    if declared == DeclaredType::Integer {
        ApiValue::Int(x as i64)
    } else {
        ApiValue::Number(x)
    }
}

/// Minimum, maximum and midpoint (floored for integer properties), deduplicated.
pub fn numeric_samples(min: f64, max: f64, declared: DeclaredType) -> Vec<f64> {
    let mut mid = (min + max) / 2.0;
    if declared == DeclaredType::Integer {
        mid = mid.floor();
    }
    let mut out: Vec<f64> = Vec::new();
    for v in [min, max, mid] {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

struct Builder<'a> {
    r: &'a MatchResult,
    n: usize,
    cases: Vec<TestCase>,
}

impl Builder<'_> {
    fn push(&mut self, payload: BTreeMap<String, ApiValue>, preset: BTreeMap<String, f64>, vv: BTreeMap<String, f64>, api: BTreeMap<String, ApiValue>) {
        self.cases.push(TestCase {
            id: format!("{}.{}", self.r.id, self.n),
            method: self.r.method,
            endpoint: self.r.endpoint.clone(),
            api_payload: payload,
            vv_preset: preset,
            expected_vv: vv,
            expected_api: api,
            provenance: vec![self.r.id.clone()],
        });
        self.n += 1;
    }

    /// One case shape per method: PUT sets the API value and expects VV raws;
    /// GET presets VV raws and expects the API value.
    fn value(&mut self, key: &str, api: ApiValue, raws: BTreeMap<String, f64>) {
        let one = BTreeMap::from([(key.to_string(), api)]);
        match self.r.method {
            Method::Put => self.push(one, BTreeMap::new(), raws, BTreeMap::new()),
            Method::Get => self.push(BTreeMap::new(), raws, BTreeMap::new(), one),
        }
    }
}

fn generate_one(r: &MatchResult, config: &GenConfig) -> Result<Vec<TestCase>, (SkipReason, String)> {
    let p = &r.property;
    let mut b = Builder { r, n: 0, cases: Vec::new() };
    match &p.domain {
        ValueDomain::Enumeration { .. } | ValueDomain::Boolean => {
            let link = r.link(Role::Whole).ok_or((SkipReason::MissingRole, "no whole-value link".to_string()))?;
            let (api_can, _) = link.value_chain.as_ref().ok_or((SkipReason::NoValueMatch, "no value chain".to_string()))?;
            let raw_of = |vv_label: &str| link.vv.encoding.raw(vv_label).map(|x| x as f64);
            match r.method {
                Method::Put => {
                    for label in api_can.lefts() {
                        let Some((_, vv_label)) = link.vv_labels_for(label).into_iter().next() else { continue };
                        let Some(raw) = raw_of(&vv_label) else { continue };
                        b.value(&p.key, label_value(&p.domain, label), BTreeMap::from([(link.vv.key.clone(), raw)]));
                    }
                }
                Method::Get => {
                    for pair in &api_can.pairs {
                        let Some((_, vv_label)) = link.vv_labels_for(&pair.left).into_iter().find(|(c, _)| *c == pair.right) else {
                            continue;
                        };
                        let Some(raw) = raw_of(&vv_label) else { continue };
                        b.value(&p.key, label_value(&p.domain, &pair.left), BTreeMap::from([(link.vv.key.clone(), raw)]));
                    }
                }
            }
        }
        ValueDomain::NumericRange { min, max } => {
            let link = r.link(Role::Whole).ok_or((SkipReason::MissingRole, "no whole-value link".to_string()))?;
            let plan = link.conversion.as_ref().ok_or((SkipReason::MissingUnit, "no conversion plan".to_string()))?;
            let (lo, hi) = match config.ranges.get(&p.key) {
                Some(o) => (o.min, o.max),
                None => match (min, max) {
                    (Some(lo), Some(hi)) => (*lo, *hi),
                    _ => return Err((SkipReason::MissingRange, "numeric property without minimum and maximum".to_string())),
                },
            };
            for v in numeric_samples(lo, hi, p.declared_type) {
                b.value(&p.key, numeric_value(p.declared_type, v), BTreeMap::from([(link.vv.key.clone(), plan.api_to_vv(v))]));
            }
        }
        ValueDomain::Datetime => {
            let targets: Vec<(String, Role)> = r.links.iter().map(|l| (l.vv.key.clone(), l.role)).collect();
            for (h, m) in TIME_SAMPLES {
                let t = recompose_datetime(epoch(), h as i64, m as i64).expect("sample time is valid");
                let parts = decompose_datetime(&t, &targets).map_err(|e| (SkipReason::MissingRole, e.to_string()))?;
                let raws = parts.into_iter().map(|(k, v)| (k, v as f64)).collect();
                b.value(&p.key, ApiValue::Text(format_api_datetime(&t)), raws);
            }
        }
        ValueDomain::FreeText => return Err((SkipReason::UnsupportedDomain, "free text".to_string())),
    }
    if b.cases.is_empty() {
        return Err((SkipReason::NoValueMatch, "no value reaches a VV raw".to_string()));
    }
    Ok(b.cases)
}

/// Cases for every result, in result order; ungenerable properties are skipped.
pub fn generate_test_cases(results: &[MatchResult], config: &GenConfig) -> (Vec<TestCase>, Vec<Skipped>) {
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match generate_one(r, config) {
            Ok(c) => cases.extend(c),
            Err((reason, detail)) => skipped.push(Skipped {
                endpoint: r.endpoint.clone(),
                method: r.method,
                key: r.property.key.clone(),
                stage: Stage::Generation,
                reason,
                detail,
            }),
        }
    }
    (cases, skipped)
}

pub fn format_raw(raw: f64) -> String {
    format!("{raw}")
}

fn case_header(c: &TestCase) -> String {
    format!("{} CASE {} {} from={}\n", c.id, c.method, c.endpoint, c.provenance.join(","))
}

fn render_put(c: &TestCase) -> String {
    let mut s = case_header(c);
    let payload = serde_json::to_string(&c.api_payload).expect("payload serializes");
    s += &format!("{} PUT {} {payload}\n", c.id, c.endpoint);
    for (k, raw) in &c.expected_vv {
        s += &format!("{} VV_EXPECT {k} {}\n", c.id, format_raw(*raw));
    }
    s
}

fn render_get(c: &TestCase) -> String {
    let mut s = case_header(c);
    for (k, raw) in &c.vv_preset {
        s += &format!("{} VV_SET {k} {}\n", c.id, format_raw(*raw));
    }
    s += &format!("{} GET {}\n", c.id, c.endpoint);
    for (k, v) in &c.expected_api {
        s += &format!("{} API_EXPECT {k} {}\n", c.id, v.to_json());
    }
    s
}

pub const RIG_PLACEHOLDER: &str = "auto";

pub fn render_test_plan(cases: &[TestCase]) -> String {
    render_test_plan_for(cases, RIG_PLACEHOLDER)
}

pub fn render_test_plan_for(cases: &[TestCase], rig: &str) -> String {
    let mut out = format!("SETUP rig {rig}\n");
    let mut endpoints: Vec<&str> = cases.iter().map(|c| c.endpoint.as_str()).collect();
    endpoints.sort();
    endpoints.dedup();
    for ep in endpoints {
        out += &format!("SETUP endpoint {ep}\n");
    }
    for c in cases {
        out += &match c.method {
            Method::Put => render_put(c),
            Method::Get => render_get(c),
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub rig: Option<String>,
    pub cases: Vec<TestCase>,
}

pub fn parse_test_plan(text: &str) -> Result<Plan, GenError> {
    let mut plan = Plan { rig: None, cases: Vec::new() };
    for (n, line) in text.lines().enumerate() {
        let err = |m: &str| GenError::Plan { line: n + 1, message: m.to_string() };
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ' ');
        let (first, second, rest) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        if first == "SETUP" {
            match second {
                "rig" => plan.rig = Some(rest.to_string()).filter(|r| r != RIG_PLACEHOLDER),
                "endpoint" => {}
                _ => return Err(err("unknown SETUP item")),
            }
            continue;
        }
        let id = first;
        if second == "CASE" {
            let mut f = rest.splitn(3, ' ');
            let method: Method = f.next().unwrap_or("").parse().map_err(|_| err("bad method"))?;
            let endpoint = f.next().ok_or_else(|| err("missing endpoint"))?.to_string();
            let from = f.next().and_then(|x| x.strip_prefix("from=")).unwrap_or("");
            let provenance = from.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
            plan.cases.push(TestCase {
                id: id.to_string(),
                method,
                endpoint,
                api_payload: BTreeMap::new(),
                vv_preset: BTreeMap::new(),
                expected_vv: BTreeMap::new(),
                expected_api: BTreeMap::new(),
                provenance,
            });
            continue;
        }
        let case = plan.cases.last_mut().filter(|c| c.id == id).ok_or_else(|| err("step outside its CASE block"))?;
        let kv = |rest: &str| -> Result<(String, String), GenError> {
            rest.split_once(' ').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| err("expected KEY VALUE"))
        };
        match second {
            "PUT" => {
                let (ep, body) = kv(rest)?;
                if ep != case.endpoint {
                    return Err(err("PUT endpoint differs from CASE"));
                }
                case.api_payload = serde_json::from_str(&body).map_err(|e| err(&e.to_string()))?;
            }
            "GET" => {
                if rest != case.endpoint {
                    return Err(err("GET endpoint differs from CASE"));
                }
            }
            "VV_SET" | "VV_EXPECT" => {
                let (k, v) = kv(rest)?;
                let raw: f64 = v.parse().map_err(|_| err("raw is not a number"))?;
                let map = if second == "VV_SET" { &mut case.vv_preset } else { &mut case.expected_vv };
                map.insert(k, raw);
            }
            "API_EXPECT" => {
                let (k, v) = kv(rest)?;
                case.expected_api.insert(k, serde_json::from_str(&v).map_err(|e| err(&e.to_string()))?);
            }
            _ => return Err(err("unknown step")),
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_test_objects, parse_spec, Format};
    use crate::matching::{map_all, Matcher, RuleBackend, Strictness};
    use crate::tables::{parse_can_table, parse_vv_table};
    use crate::units::UnitRegistry;

    const SPEC: &str = r#"
paths:
  /climate:
    put:
      requestBody: {content: {application/json: {schema: {properties: {
        acMode: {type: string, enum: [STANDARD, ECONOMY]},
        speed: {type: number, minimum: 0, maximum: 250, x-unit: km/h},
        level: {type: integer, minimum: 0, maximum: 9, description: "fill level"}}}}}}
    get:
      responses: {"200": {content: {application/json: {schema: {properties: {
        acMode: {type: string, enum: [STANDARD, ECONOMY]}}}}}}}
  /alarm:
    put:
      requestBody: {content: {application/json: {schema: {properties: {
        alarmTime: {type: string, format: date-time}}}}}}
"#;
    const CAN: &str = "acMode_CAN | climate | | STANDARD=0;ECONOMY=1 |\nspeed_CAN | climate | km/h | |\nlevel_CAN | climate | | |\nalarmTimeHours_CAN | alarm | | |\nalarmTimeMinutes_CAN | alarm | | |\n";
    const VV: &str = "acMode | acMode_CAN | | STANDARD=0;ECONOMY=2\nspeed | speed_CAN | m/s |\nlevel | level_CAN | |\nalarmHr | alarmTimeHours_CAN | |\nalarmMin | alarmTimeMinutes_CAN | |\n";

    fn cases() -> (Vec<TestCase>, Vec<Skipped>, usize) {
        let sets = extract_test_objects(&parse_spec(SPEC, Format::Yaml).unwrap());
        let b = RuleBackend::bundled();
        let u = UnitRegistry::bundled();
        let m = Matcher { backend: &b, strictness: Strictness::Moderate, units: &u };
        let out = map_all(&sets, &parse_can_table(CAN).unwrap(), &parse_vv_table(VV).unwrap(), &m, 1);
        let (c, mut s) = generate_test_cases(&out.results, &GenConfig::default());
        s.extend(out.skipped);
        (c, s, sets.iter().map(|x| x.properties.len()).sum())
    }

    #[test]
    fn enum_cases_follow_the_value_chain() {
        let (c, _, _) = cases();
        let put = c.iter().find(|c| c.id == "climate.put.acMode.1").unwrap();
        assert_eq!(put.api_payload["acMode"], ApiValue::Text("ECONOMY".into()));
        assert_eq!(put.expected_vv["acMode"], 2.0);
        let gets: Vec<&TestCase> = c.iter().filter(|c| c.id.starts_with("climate.get.acMode")).collect();
        assert_eq!(gets.len(), 2);
        assert_eq!(gets[1].vv_preset["acMode"], 2.0);
    }

    #[test]
    fn numeric_samples_are_converted() {
        let (c, _, _) = cases();
        let speed: Vec<f64> = c.iter().filter(|c| c.id.starts_with("climate.put.speed")).map(|c| c.expected_vv["speed"]).collect();
        assert_eq!(speed.len(), 3);
        assert_eq!(speed[0], 0.0);
        assert!((speed[1] - 250.0 / 3.6).abs() < 1e-9);
        assert!((speed[2] - 125.0 / 3.6).abs() < 1e-9);
    }

    #[test]
    fn unitless_numeric_is_skipped_and_accounted() {
        let (c, s, total) = cases();
        let level = s.iter().find(|s| s.key == "level").unwrap();
        assert_eq!(level.reason, SkipReason::MissingUnit);
        let mut tested: Vec<(String, Method, String)> =
            c.iter().map(|c| (c.endpoint.clone(), c.method, c.provenance[0].rsplit('.').next().unwrap().to_string())).collect();
        tested.sort();
        tested.dedup();
        assert_eq!(tested.len() + s.len(), total);
    }

    #[test]
    fn datetime_splits_into_roles() {
        let (c, _, _) = cases();
        let t = c.iter().find(|c| c.id == "alarm.put.alarmTime.1").unwrap();
        assert_eq!(t.expected_vv, BTreeMap::from([("alarmHr".to_string(), 11.0), ("alarmMin".to_string(), 59.0)]));
        let t = parse_api_datetime("1970-01-01T07:45:00Z").unwrap();
        let targets = vec![("AlarmHr".to_string(), Role::Hours), ("AlarmMin".to_string(), Role::Minutes)];
        assert_eq!(decompose_datetime(&t, &targets).unwrap(), BTreeMap::from([("AlarmHr".into(), 7), ("AlarmMin".into(), 45)]));
        assert_eq!(decompose_datetime(&t, &targets[..1]), Err(GenError::RoleMissing(Role::Minutes)));
    }

    #[test]
    fn plan_round_trips_and_is_stable() {
        let (c, _, _) = cases();
        let text = render_test_plan_for(&c, "http://127.0.0.1:1");
        assert_eq!(text, render_test_plan_for(&c, "http://127.0.0.1:1"));
        let plan = parse_test_plan(&text).unwrap();
        assert_eq!(plan.rig.as_deref(), Some("http://127.0.0.1:1"));
        assert_eq!(plan.cases, c);
        assert_eq!(parse_test_plan(&render_test_plan(&[])).unwrap(), Plan { rig: None, cases: vec![] });
    }

    #[test]
    fn one_put_case_renders_two_steps() {
        let (c, _, _) = cases();
        let put = c.iter().find(|c| c.id == "climate.put.acMode.0").unwrap().clone();
        let text = render_test_plan(&[put]);
        let steps: Vec<&str> = text.lines().filter(|l| !l.starts_with("SETUP") && !l.contains(" CASE ")).collect();
        assert_eq!(steps.len(), 2);
        assert!(steps[0].contains(" PUT /climate "));
        assert!(steps[1].contains(" VV_EXPECT acMode 0"));
    }
}
