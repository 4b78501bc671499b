//! Remote matcher client with typed outputs, validation-driven retries and
//! a record/replay store for hermetic runs.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::matching::{BackendError, Category, LabelPair, MatchCandidate, MatcherBackend, RuleBackend, ScoredAlternative, Strictness};
use crate::tables::Alternative;

pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const TOKEN_ENV: &str = "MATCH_BACKEND_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    KeyMatch,
    ValueMatch,
    PseudocodeMatch,
    UnitInfer,
    TestcaseGen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldType {
    Text,
    Integer,
    Number,
    Boolean,
    OneOf { values: Vec<String> },
    List { item: Box<FieldType> },
    Record { fields: Vec<Field> },
    Optional { inner: Box<FieldType> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(flatten)]
    pub ty: FieldType,
}

impl Field {
    pub fn new(name: &str, ty: FieldType) -> Field {
        Field { name: name.to_string(), ty }
    }
}

fn list(item: FieldType) -> FieldType {
    FieldType::List { item: Box::new(item) }
}

fn one_of(values: &[String]) -> FieldType {
    FieldType::OneOf { values: values.to_vec() }
}

fn record(fields: Vec<Field>) -> FieldType {
    FieldType::Record { fields }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub task: Task,
    pub inputs: Value,
    pub output_schema: Vec<Field>,
    pub strictness: Strictness,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub outputs: Value,
    pub attempts_used: u32,
}

/// What actually goes over the wire for one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub task: Task,
    pub strictness: Strictness,
    pub prompt: String,
    pub inputs: Value,
    pub output_schema: Vec<Field>,
    pub feedback: Vec<String>,
}

impl WireRequest {
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(self).expect("wire request serializes");
        let digest = Sha256::digest(body.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check(ty: &FieldType, v: &Value, path: &str) -> Result<(), String> {
    let bad = |want: &str| Err(format!("{path}: expected {want}, got {v}"));
    match ty {
        FieldType::Text => if v.is_string() { Ok(()) } else { bad("text") },
        FieldType::Integer => if v.is_i64() || v.is_u64() { Ok(()) } else { bad("integer") },
        FieldType::Number => if v.is_number() { Ok(()) } else { bad("number") },
        FieldType::Boolean => if v.is_boolean() { Ok(()) } else { bad("boolean") },
        FieldType::OneOf { values } => match v.as_str() {
            Some(s) if values.iter().any(|x| x == s) => Ok(()),
            _ => bad(&format!("one of {values:?}")),
        },
        FieldType::List { item } => {
            let Some(items) = v.as_array() else { return bad("list") };
            for (i, it) in items.iter().enumerate() {
                check(item, it, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        FieldType::Record { fields } => {
            let Some(obj) = v.as_object() else { return bad("record") };
            validate_fields(fields, obj, path)
        }
        FieldType::Optional { inner } => if v.is_null() { Ok(()) } else { check(inner, v, path) },
    }
}

fn validate_fields(fields: &[Field], obj: &Map<String, Value>, path: &str) -> Result<(), String> {
    for f in fields {
        let p = if path.is_empty() { f.name.clone() } else { format!("{path}.{}", f.name) };
        match obj.get(&f.name) {
            Some(v) => check(&f.ty, v, &p)?,
            None if matches!(f.ty, FieldType::Optional { .. }) => {}
            None => return Err(format!("{p}: missing field")),
        }
    }
    Ok(())
}

/// Check a record against a field list; the error names the first violation.
pub fn validate(schema: &[Field], outputs: &Value) -> Result<(), String> {
    let Some(obj) = outputs.as_object() else {
        return Err(format!("outputs: expected record, got {outputs}"));
    };
    validate_fields(schema, obj, "")
}

pub trait Transport: Send + Sync {
    /// Send one attempt; the reply body is a record with an `outputs` field.
    fn send(&self, req: &WireRequest) -> Result<String, BackendError>;
}

/// Send, validate, and re-send with the violation appended until the reply
/// conforms or `max_retries` re-sends are spent.
pub fn complete_typed(req: &BackendRequest, transport: &dyn Transport) -> Result<BackendResponse, BackendError> {
    assert!(!req.output_schema.is_empty(), "output schema must name at least one field");
    let mut wire = WireRequest {
        task: req.task,
        strictness: req.strictness,
        prompt: prompt(req.task, req.strictness),
        inputs: req.inputs.clone(),
        output_schema: req.output_schema.clone(),
        feedback: Vec::new(),
    };
    let mut last = String::new();
    for attempt in 1..=req.max_retries + 1 {
        let body = transport.send(&wire)?;
        let verdict = serde_json::from_str::<Value>(&body)
            .map_err(|e| format!("reply is not a structured record: {e}"))
            .and_then(|v| match v {
                Value::Object(mut m) => m.remove("outputs").ok_or_else(|| "reply has no outputs field".to_string()),
                other => Err(format!("reply is not a record: {other}")),
            })
            .and_then(|outputs| validate(&req.output_schema, &outputs).map(|_| outputs));
        match verdict {
            Ok(outputs) => return Ok(BackendResponse { outputs, attempts_used: attempt }),
            Err(v) => {
                wire.feedback.push(format!("attempt {attempt} rejected: {v}"));
                last = v;
            }
        }
    }
    Err(BackendError::SchemaViolation { attempts: req.max_retries + 1, violation: last })
}

pub fn prompt(task: Task, strictness: Strictness) -> String {
    let level = match strictness {
        Strictness::Strict => "Strictness: strict. Pair only items that are certainly the same (exact, restyled, or a clear one-letter typo). Return at most one pseudocode alternative.",
        Strictness::Moderate => "Strictness: moderate. Also pair abbreviations, negated antonyms and synonyms.",
        Strictness::Relaxed => "Strictness: relaxed. Also accept substates that imply the state (Ringing implies Active).",
    };
    let body = match task {
        Task::KeyMatch => "Match each left key to at most one right key naming the same vehicle attribute. Examples: DriverTimeSetting ~ DriverTimeSeting (spelling); standard_mode ~ STANDARDMODE (format); standard ~ STD (abbreviation); OFF ~ NOT_ON (logical); AutoStart ~ AutoLaunch (semantic).",
        Task::ValueMatch => "Match each left value label to at most one right label with the same meaning. Example: TRUE ~ Active, FALSE ~ Inactive.",
        Task::PseudocodeMatch => "List the alternatives of the OR-chain that hold when the left attribute has the given value, best first. Example: AlarmActive=True vs AlarmClockStat:Active OR AlarmClockStat:Ringing.",
        Task::UnitInfer => "Name the physical unit of the attribute from its key and description, or null if none is stated. Example: 'speed in km/h' gives km/h.",
        Task::TestcaseGen => "Propose test values inside the declared domain.",
    };
    format!("{body}\n{level}\nScores are in [0,1]. Categories: exact, format, spelling, abbreviation, logical, semantic, pseudocode.")
}

/// POSTs wire requests as JSON to `url`.
pub struct HttpTransport {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: &str) -> HttpTransport {
        HttpTransport { url: url.to_string(), token: std::env::var(TOKEN_ENV).ok(), agent: ureq::Agent::new_with_defaults() }
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &WireRequest) -> Result<String, BackendError> {
        let body = serde_json::to_string(req).expect("wire request serializes");
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            call = call.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = call.send(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))
    }
}

/// Serves canned replies in order and keeps every request it saw.
#[derive(Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<WireRequest>>,
}

impl ScriptedTransport {
    pub fn new<I: IntoIterator<Item = String>>(replies: I) -> ScriptedTransport {
        ScriptedTransport { replies: Mutex::new(replies.into_iter().collect()), seen: Mutex::default() }
    }

    pub fn seen(&self) -> Vec<WireRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, req: &WireRequest) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(req.clone());
        self.replies.lock().unwrap().pop_front().ok_or_else(|| BackendError::Transport("script exhausted".into()))
    }
}

/// Answers wire requests with the rule-based matcher, standing in for a model.
pub struct RuleTransport {
    rules: RuleBackend,
}

impl RuleTransport {
    pub fn new(rules: RuleBackend) -> RuleTransport {
        RuleTransport { rules }
    }
}

fn strings(v: &Value, field: &str) -> Result<Vec<String>, BackendError> {
    serde_json::from_value(v.get(field).cloned().unwrap_or(Value::Null))
        .map_err(|e| BackendError::Transport(format!("inputs.{field}: {e}")))
}

impl Transport for RuleTransport {
    fn send(&self, req: &WireRequest) -> Result<String, BackendError> {
        let i = &req.inputs;
        let outputs = match req.task {
            Task::KeyMatch => json!({ "pairs": self.rules.match_keys(&strings(i, "left")?, &strings(i, "right")?, req.strictness)? }),
            Task::ValueMatch => json!({ "pairs": self.rules.match_labels(&strings(i, "left")?, &strings(i, "right")?, req.strictness)? }),
            Task::PseudocodeMatch => {
                let left: Alternative = serde_json::from_value(i["left"].clone()).map_err(|e| BackendError::Transport(e.to_string()))?;
                let alts: Vec<Alternative> =
                    serde_json::from_value(i["alternatives"].clone()).map_err(|e| BackendError::Transport(e.to_string()))?;
                let found = self.rules.match_pseudocode(&left, &alts, req.strictness)?;
                let matches: Vec<Value> = found
                    .into_iter()
                    .map(|s| json!({"key": s.alternative.key, "label": s.alternative.label, "category": s.category, "score": s.score}))
                    .collect();
                json!({ "matches": matches })
            }
            Task::UnitInfer => {
                let key = i["key"].as_str().unwrap_or_default();
                json!({ "unit": self.rules.infer_unit(key, i["description"].as_str())? })
            }
            Task::TestcaseGen => return Err(BackendError::Transport("rule transport does not generate test cases".into())),
        };
        Ok(json!({ "outputs": outputs }).to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreLine {
    hash: String,
    request: WireRequest,
    response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    Record,
    Replay,
}

/// Request-hash → reply store on disk as JSON lines.
pub struct ReplayStore {
    mode: StoreMode,
    path: PathBuf,
    entries: Mutex<BTreeMap<String, String>>,
    inner: Option<Box<dyn Transport>>,
}

fn load_store(path: &Path) -> Result<BTreeMap<String, String>, BackendError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let f = File::open(path).map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))?;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Transport(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StoreLine = serde_json::from_str(&line)
            .map_err(|e| BackendError::Transport(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.insert(rec.hash, rec.response);
    }
    Ok(out)
}

/// Open a store. Record mode forwards to `inner` and appends each exchange;
/// replay mode answers from the file alone.
pub fn record_replay(path: &Path, mode: StoreMode, inner: Option<Box<dyn Transport>>) -> Result<ReplayStore, BackendError> {
    if mode == StoreMode::Record && inner.is_none() {
        return Err(BackendError::Transport("record mode needs a transport to record from".into()));
    }
    if mode == StoreMode::Replay && !path.exists() {
        return Err(BackendError::Transport(format!("replay store {} not found", path.display())));
    }
    Ok(ReplayStore { mode, path: path.to_path_buf(), entries: Mutex::new(load_store(path)?), inner })
}

impl Transport for ReplayStore {
    fn send(&self, req: &WireRequest) -> Result<String, BackendError> {
        let hash = req.hash();
        if self.mode == StoreMode::Replay {
            return self.entries.lock().unwrap().get(&hash).cloned().ok_or(BackendError::ReplayMiss(hash));
        }
        let response = self.inner.as_ref().expect("record mode has a transport").send(req)?;
        let mut entries = self.entries.lock().unwrap();
        if let std::collections::btree_map::Entry::Vacant(slot) = entries.entry(hash.clone()) {
            let line = serde_json::to_string(&StoreLine { hash: hash.clone(), request: req.clone(), response: response.clone() })
                .expect("store line serializes");
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| BackendError::Transport(format!("{}: {e}", self.path.display())))?;
            writeln!(f, "{line}").map_err(|e| BackendError::Transport(e.to_string()))?;
            slot.insert(response.clone());
        }
        Ok(response)
    }
}

/// Counting gate bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        drop(free);
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Matcher backend that asks a transport for every decision.
pub struct LlmBackend {
    transport: Arc<dyn Transport>,
    max_retries: u32,
    gate: Gate,
}

impl LlmBackend {
    pub fn new(transport: Arc<dyn Transport>, max_retries: u32, parallelism: usize) -> LlmBackend {
        LlmBackend { transport, max_retries, gate: Gate { free: Mutex::new(parallelism.max(1)), cv: Condvar::new() } }
    }

    fn ask(&self, task: Task, inputs: Value, schema: Vec<Field>, strictness: Strictness) -> Result<Value, BackendError> {
        let req = BackendRequest { task, inputs, output_schema: schema, strictness, max_retries: self.max_retries };
        self.gate.run(|| complete_typed(&req, self.transport.as_ref())).map(|r| r.outputs)
    }
}

fn categories() -> Vec<String> {
    Category::ALL.iter().map(|c| c.as_str().to_string()).collect()
}

fn decode<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, BackendError> {
    serde_json::from_value(v).map_err(|e| BackendError::Invalid(e.to_string()))
}

impl MatcherBackend for LlmBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn match_keys(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<MatchCandidate>, BackendError> {
        let schema = vec![Field::new(
            "pairs",
            list(record(vec![
                Field::new("left_key", one_of(left)),
                Field::new("right_key", one_of(right)),
                Field::new("category", one_of(&categories())),
                Field::new("score", FieldType::Number),
            ])),
        )];
        let out = self.ask(Task::KeyMatch, json!({"left": left, "right": right}), schema, strictness)?;
        let pairs: Vec<MatchCandidate> = decode(out["pairs"].clone())?;
        Ok(pairs.into_iter().filter(|p| p.score >= strictness.threshold()).collect())
    }

    fn match_labels(&self, left: &[String], right: &[String], strictness: Strictness) -> Result<Vec<LabelPair>, BackendError> {
        let schema = vec![Field::new(
            "pairs",
            list(record(vec![
                Field::new("left", one_of(left)),
                Field::new("right", one_of(right)),
                Field::new("category", one_of(&categories())),
                Field::new("score", FieldType::Number),
            ])),
        )];
        let out = self.ask(Task::ValueMatch, json!({"left": left, "right": right}), schema, strictness)?;
        let pairs: Vec<LabelPair> = decode(out["pairs"].clone())?;
        Ok(pairs.into_iter().filter(|p| p.score >= strictness.threshold()).collect())
    }

    fn match_pseudocode(
        &self,
        left: &Alternative,
        alts: &[Alternative],
        strictness: Strictness,
    ) -> Result<Vec<ScoredAlternative>, BackendError> {
        let labels: Vec<String> = alts.iter().map(|a| a.label.clone()).collect();
        let keys: Vec<String> = alts.iter().map(|a| a.key.clone()).collect();
        let schema = vec![Field::new(
            "matches",
            list(record(vec![
                Field::new("key", one_of(&keys)),
                Field::new("label", one_of(&labels)),
                Field::new("category", one_of(&categories())),
                Field::new("score", FieldType::Number),
            ])),
        )];
        let out = self.ask(Task::PseudocodeMatch, json!({"left": left, "alternatives": alts}), schema, strictness)?;
        #[derive(Deserialize)]
        struct Hit {
            key: String,
            label: String,
            category: Category,
            score: f64,
        }
        let hits: Vec<Hit> = decode(out["matches"].clone())?;
        let mut found: Vec<ScoredAlternative> = hits
            .into_iter()
            .filter(|h| h.score >= strictness.threshold())
            .map(|h| ScoredAlternative { alternative: Alternative { key: h.key, label: h.label }, category: h.category, score: h.score })
            .filter(|s| alts.contains(&s.alternative))
            .collect();
        if strictness == Strictness::Strict {
            found.truncate(1);
        }
        Ok(found)
    }

    fn infer_unit(&self, key: &str, description: Option<&str>) -> Result<Option<String>, BackendError> {
        let schema = vec![Field::new("unit", FieldType::Optional { inner: Box::new(FieldType::Text) })];
        let out = self.ask(Task::UnitInfer, json!({"key": key, "description": description}), schema, Strictness::Moderate)?;
        Ok(out["unit"].as_str().map(str::to_string))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(max_retries: u32) -> BackendRequest {
        BackendRequest {
            task: Task::UnitInfer,
            inputs: json!({"key": "speed"}),
            output_schema: vec![Field::new("unit", FieldType::Text)],
            strictness: Strictness::Moderate,
            max_retries,
        }
    }

    const GOOD: &str = r#"{"outputs":{"unit":"km/h"}}"#;
    const BAD: &str = r#"{"outputs":{"unit":3}}"#;

    #[test]
    fn valid_first_reply_uses_one_attempt() {
        let t = ScriptedTransport::new([GOOD.to_string()]);
        let r = complete_typed(&req(3), &t).unwrap();
        assert_eq!(r.attempts_used, 1);
        assert_eq!(r.outputs["unit"], "km/h");
    }

    #[test]
    fn violations_are_fed_back() {
        let t = ScriptedTransport::new([BAD.to_string(), "not json".to_string(), GOOD.to_string()]);
        let r = complete_typed(&req(3), &t).unwrap();
        assert_eq!(r.attempts_used, 3);
        let seen = t.seen();
        assert_eq!(seen[0].feedback.len(), 0);
        assert_eq!(seen[2].feedback.len(), 2);
        assert!(seen[1].feedback[0].contains("unit: expected text"));
    }

    #[test]
    fn exhaustion_is_a_schema_violation() {
        let t = ScriptedTransport::new(vec![BAD.to_string(); 10]);
        let err = complete_typed(&req(2), &t).unwrap_err();
        assert!(matches!(err, BackendError::SchemaViolation { attempts: 3, .. }));
        assert_eq!(t.seen().len(), 3);
    }

    #[test]
    fn nested_schema_paths() {
        let schema = vec![Field::new("pairs", list(record(vec![Field::new("k", one_of(&["a".to_string()]))])))];
        assert!(validate(&schema, &json!({"pairs": [{"k": "a"}]})).is_ok());
        let err = validate(&schema, &json!({"pairs": [{"k": "a"}, {"k": "b"}]})).unwrap_err();
        assert!(err.starts_with("pairs[1].k"), "{err}");
        assert_eq!(validate(&schema, &json!({})).unwrap_err(), "pairs: missing field");
    }

    #[test]
    fn replay_serves_recorded_bytes_and_misses_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let rec = record_replay(&path, StoreMode::Record, Some(Box::new(RuleTransport::new(RuleBackend::bundled())))).unwrap();
        let backend = LlmBackend::new(Arc::new(rec), 3, 1);
        let left = vec!["acMode".to_string()];
        let right = vec!["ac_mode".to_string(), "fanSpeed".to_string()];
        let live = backend.match_keys(&left, &right, Strictness::Moderate).unwrap();
        assert_eq!(live[0].right_key, "ac_mode");

        let rep = record_replay(&path, StoreMode::Replay, None).unwrap();
        let backend = LlmBackend::new(Arc::new(rep), 3, 1);
        assert_eq!(backend.match_keys(&left, &right, Strictness::Moderate).unwrap(), live);
        assert!(matches!(backend.match_keys(&right, &left, Strictness::Moderate), Err(BackendError::ReplayMiss(_))));
    }
}
