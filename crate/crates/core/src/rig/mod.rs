//! Simulated test rig: a REST gateway over a simulated CAN bus and a
//! Virtual Vehicle (VV) state table, with admin access and fault injection.
//!
//! Gateway PUT: API value → CAN raw (property codec) → VV raw (binding).
//! Gateway GET runs the same chain backwards. Every signal that crosses the
//! gateway is logged as a [`CanFrame`].

mod client;
mod server;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ingest::Method;
use crate::testgen::{format_api_datetime, parse_api_datetime, recompose_datetime};

pub use client::RigClient;
pub use server::{start_rig, RigHandle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("rig config: {0}")]
    Config(String),
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error("unknown VV key {0}")]
    UnknownKey(String),
    #[error("fault target {0} does not exist or the fault would not be observable")]
    UnknownTarget(String),
}

/// A gateway or admin call failure as seen by a caller.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    #[error("rig unreachable: {0}")]
    Unreachable(String),
    #[error("status {status}: {message}")]
    Rejected { status: u16, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum Codec {
    /// `write` maps API labels to CAN raws; `read` maps CAN raws back,
    /// possibly many raws to one label.
    Enum {
        can_key: String,
        write: BTreeMap<String, i64>,
        read: Vec<(i64, String)>,
        #[serde(default)]
        boolean: bool,
    },
    /// CAN raw = API value × scale.
    Numeric {
        can_key: String,
        scale: f64,
        #[serde(default)]
        integer: bool,
    },
    Datetime { hours_key: String, minutes_key: String },
}

impl Codec {
    pub fn can_keys(&self) -> Vec<&str> {
        match self {
            Codec::Enum { can_key, .. } | Codec::Numeric { can_key, .. } => vec![can_key],
            Codec::Datetime { hours_key, minutes_key } => vec![hours_key, minutes_key],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyConfig {
    pub key: String,
    #[serde(flatten)]
    pub codec: Codec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub path: String,
    pub methods: Vec<Method>,
    pub properties: Vec<PropertyConfig>,
}

/// CAN signal → VV entry. Enum signals translate raws through `enum_map`
/// (CAN raw, VV raw); others scale by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvBinding {
    pub can_key: String,
    pub vv_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_map: Option<Vec<(i64, f64)>>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub default_raw: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultSpec {
    /// Numeric properties of the endpoint are off by `factor`, both ways.
    WrongScale { endpoint: String, factor: f64 },
    /// Two labels of the endpoint's enum properties trade places, both ways.
    SwappedEnum { endpoint: String, label_a: String, label_b: String },
    /// The CAN signal never arrives: writes are dropped, reads are missing.
    DeadSignal { can_key: String },
    /// The first read after each write returns the value before the write.
    StaleState { vv_key: String },
    /// The gateway forgets the API→CAN unit conversion of the signal.
    WrongUnit { can_key: String },
}

impl FaultSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            FaultSpec::WrongScale { .. } => "wrong_scale",
            FaultSpec::SwappedEnum { .. } => "swapped_enum",
            FaultSpec::DeadSignal { .. } => "dead_signal",
            FaultSpec::StaleState { .. } => "stale_state",
            FaultSpec::WrongUnit { .. } => "wrong_unit",
        }
    }

    pub fn target(&self) -> &str {
        match self {
            FaultSpec::WrongScale { endpoint, .. } | FaultSpec::SwappedEnum { endpoint, .. } => endpoint,
            FaultSpec::DeadSignal { can_key } | FaultSpec::WrongUnit { can_key } => can_key,
            FaultSpec::StaleState { vv_key } => vv_key,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub endpoints: Vec<EndpointConfig>,
    pub vv_bindings: Vec<VvBinding>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl RigConfig {
    pub fn endpoint(&self, path: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.path == path)
    }

    pub fn binding(&self, can_key: &str) -> Option<&VvBinding> {
        self.vv_bindings.iter().find(|b| b.can_key == can_key)
    }

    /// Endpoint whose properties use the CAN signal.
    pub fn endpoint_of_can(&self, can_key: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.properties.iter().any(|p| p.codec.can_keys().contains(&can_key)))
    }

    pub fn validate(&self) -> Result<(), RigError> {
        let mut paths = BTreeSet::new();
        for e in &self.endpoints {
            if !e.path.starts_with('/') || e.path.starts_with("/_") {
                return Err(RigError::Config(format!("endpoint path {:?} must start with / and not /_", e.path)));
            }
            if !paths.insert(&e.path) {
                return Err(RigError::Config(format!("duplicate endpoint {}", e.path)));
            }
            for p in &e.properties {
                for k in p.codec.can_keys() {
                    if self.binding(k).is_none() {
                        return Err(RigError::Config(format!("{}#{}: CAN key {k} has no VV binding", e.path, p.key)));
                    }
                }
                if let Codec::Enum { write, read, .. } = &p.codec {
                    let b = self.binding(p.codec.can_keys()[0]).expect("checked above");
                    let Some(map) = &b.enum_map else {
                        return Err(RigError::Config(format!("{}#{}: enum signal bound without enum_map", e.path, p.key)));
                    };
                    for raw in write.values().chain(read.iter().map(|(r, _)| r)) {
                        if !map.iter().any(|(c, _)| c == raw) {
                            return Err(RigError::Config(format!("{}#{}: CAN raw {raw} missing from enum_map", e.path, p.key)));
                        }
                    }
                }
                if let Codec::Numeric { scale, .. } = &p.codec {
                    if !scale.is_finite() || *scale == 0.0 {
                        return Err(RigError::Config(format!("{}#{}: scale must be finite and non-zero", e.path, p.key)));
                    }
                }
            }
        }
        let mut vv_keys = BTreeSet::new();
        for b in &self.vv_bindings {
            if !vv_keys.insert(&b.vv_key) {
                return Err(RigError::Config(format!("VV key {} bound twice", b.vv_key)));
            }
            if b.scale == 0.0 || !b.scale.is_finite() {
                return Err(RigError::Config(format!("VV binding {} has unusable scale", b.vv_key)));
            }
        }
        for f in &self.faults {
            self.check_fault(f)?;
        }
        Ok(())
    }

    fn check_fault(&self, f: &FaultSpec) -> Result<(), RigError> {
        let missing = || RigError::UnknownTarget(f.target().to_string());
        let ok = match f {
            FaultSpec::WrongScale { endpoint, factor } => {
                *factor != 1.0
                    && self.endpoint(endpoint).is_some_and(|e| e.properties.iter().any(|p| matches!(p.codec, Codec::Numeric { .. })))
            }
            FaultSpec::SwappedEnum { endpoint, label_a, label_b } => self.endpoint(endpoint).is_some_and(|e| {
                e.properties.iter().any(|p| match &p.codec {
                    Codec::Enum { write, .. } => label_a != label_b && write.contains_key(label_a) && write.contains_key(label_b),
                    _ => false,
                })
            }),
            FaultSpec::DeadSignal { can_key } => self.endpoint_of_can(can_key).is_some(),
            FaultSpec::StaleState { vv_key } => self.vv_bindings.iter().any(|b| &b.vv_key == vv_key),
            FaultSpec::WrongUnit { can_key } => self.endpoint_of_can(can_key).is_some_and(|e| {
                e.properties.iter().any(|p| matches!(&p.codec, Codec::Numeric { can_key: k, scale, .. } if k == can_key && *scale != 1.0))
            }),
        };
        if ok {
            Ok(())
        } else {
            Err(missing())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanFrame {
    pub key: String,
    pub raw: f64,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy)]
struct VvCell {
    current: f64,
    previous: f64,
    stale_pending: bool,
}

#[derive(Debug)]
struct RigState {
    vv: BTreeMap<String, VvCell>,
    trace: Vec<CanFrame>,
    tick: u64,
    faults: Vec<FaultSpec>,
}

/// The in-process rig. Shared behind the HTTP server, or driven directly.
#[derive(Debug)]
pub struct Rig {
    config: RigConfig,
    state: Mutex<RigState>,
}

/// Operations a test executor needs from a rig.
pub trait RigApi: Send + Sync {
    fn put(&self, endpoint: &str, body: &Map<String, Value>) -> Result<(), CallError>;
    fn get(&self, endpoint: &str) -> Result<Map<String, Value>, CallError>;
    fn vv_set(&self, key: &str, raw: f64) -> Result<(), CallError>;
    fn vv_get(&self, key: &str) -> Result<f64, CallError>;
}

fn rejected(status: u16, message: impl Into<String>) -> CallError {
    CallError::Rejected { status, message: message.into() }
}

fn label_of(v: &Value, boolean: bool) -> Option<String> {
    match v {
        Value::Bool(b) if boolean => Some(if *b { "TRUE" } else { "FALSE" }.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn swap<'a>(label: &'a str, faults: &'a [&'a FaultSpec]) -> &'a str {
    for f in faults {
        if let FaultSpec::SwappedEnum { label_a, label_b, .. } = f {
            if label == label_a {
                return label_b;
            }
            if label == label_b {
                return label_a;
            }
        }
    }
    label
}

impl RigState {
    fn write(&mut self, key: &str, raw: f64) {
        let cell = self.vv.get_mut(key).expect("bound key");
        cell.previous = cell.current;
        cell.current = raw;
        cell.stale_pending = true;
    }

    fn read(&mut self, key: &str) -> f64 {
        let stale = self.faults.iter().any(|f| matches!(f, FaultSpec::StaleState { vv_key } if vv_key == key));
        let cell = self.vv.get_mut(key).expect("bound key");
        if stale && cell.stale_pending {
            cell.stale_pending = false;
            return cell.previous;
        }
        cell.stale_pending = false;
        cell.current
    }

    fn frame(&mut self, key: &str, raw: f64) {
        self.tick += 1;
        self.trace.push(CanFrame { key: key.to_string(), raw, tick: self.tick });
    }

    /// Faults aimed at the endpoint itself.
    fn endpoint_faults(&self, path: &str) -> Vec<FaultSpec> {
        self.faults
            .iter()
            .filter(|f| matches!(f, FaultSpec::WrongScale { .. } | FaultSpec::SwappedEnum { .. }) && f.target() == path)
            .cloned()
            .collect()
    }

    fn dead(&self, can_key: &str) -> bool {
        self.faults.iter().any(|f| matches!(f, FaultSpec::DeadSignal { can_key: k } if k == can_key))
    }

    fn no_unit(&self, can_key: &str) -> bool {
        self.faults.iter().any(|f| matches!(f, FaultSpec::WrongUnit { can_key: k } if k == can_key))
    }
}

impl Rig {
    pub fn new(config: RigConfig) -> Result<Rig, RigError> {
        config.validate()?;
        let vv = config
            .vv_bindings
            .iter()
            .map(|b| (b.vv_key.clone(), VvCell { current: b.default_raw, previous: b.default_raw, stale_pending: false }))
            .collect();
        let faults = config.faults.clone();
        Ok(Rig { config, state: Mutex::new(RigState { vv, trace: Vec::new(), tick: 0, faults }) })
    }

    pub fn config(&self) -> &RigConfig {
        &self.config
    }

    fn endpoint_for(&self, path: &str, method: Method) -> Result<&EndpointConfig, CallError> {
        let ep = self.config.endpoint(path).ok_or_else(|| rejected(404, format!("no endpoint {path}")))?;
        if !ep.methods.contains(&method) {
            return Err(rejected(405, format!("{method} not allowed on {path}")));
        }
        Ok(ep)
    }

    fn binding(&self, can_key: &str) -> &VvBinding {
        self.config.binding(can_key).expect("validated config binds every CAN key")
    }

    fn can_to_vv(b: &VvBinding, can: f64) -> f64 {
        match &b.enum_map {
            Some(map) => map.iter().find(|(c, _)| *c as f64 == can).map_or(f64::NAN, |(_, v)| *v),
            None => can * b.scale,
        }
    }

    fn vv_to_can(b: &VvBinding, vv: f64) -> f64 {
        match &b.enum_map {
            Some(map) => map.iter().find(|(_, v)| *v == vv).map_or(f64::NAN, |(c, _)| *c as f64),
            None => vv / b.scale,
        }
    }

    pub fn inject_fault(&self, fault: FaultSpec) -> Result<(), RigError> {
        self.config.check_fault(&fault)?;
        self.state.lock().unwrap().faults.push(fault);
        Ok(())
    }

    pub fn clear_faults(&self) {
        self.state.lock().unwrap().faults.clear();
    }

    pub fn can_trace(&self) -> Vec<CanFrame> {
        self.state.lock().unwrap().trace.clone()
    }

    pub fn vv_keys(&self) -> Vec<String> {
        self.config.vv_bindings.iter().map(|b| b.vv_key.clone()).collect()
    }

    pub fn vv_set(&self, key: &str, raw: f64) -> Result<(), RigError> {
        let mut st = self.state.lock().unwrap();
        if !st.vv.contains_key(key) {
            return Err(RigError::UnknownKey(key.to_string()));
        }
        st.write(key, raw);
        Ok(())
    }

    pub fn vv_get(&self, key: &str) -> Result<f64, RigError> {
        let mut st = self.state.lock().unwrap();
        if !st.vv.contains_key(key) {
            return Err(RigError::UnknownKey(key.to_string()));
        }
        Ok(st.read(key))
    }

    pub fn gateway_put(&self, path: &str, body: &Map<String, Value>) -> Result<(), CallError> {
        let ep = self.endpoint_for(path, Method::Put)?;
        let mut st = self.state.lock().unwrap();
        let faults = st.endpoint_faults(path);
        let faults: Vec<&FaultSpec> = faults.iter().collect();
        let mut frames: Vec<(String, f64)> = Vec::new();
        // Encode the whole body first so a bad body changes nothing.
        for (k, v) in body {
            let p = ep.properties.iter().find(|p| &p.key == k).ok_or_else(|| rejected(400, format!("unknown property {k}")))?;
            match &p.codec {
                Codec::Enum { can_key, write, boolean, .. } => {
                    let label = label_of(v, *boolean).ok_or_else(|| rejected(400, format!("{k}: expected a label")))?;
                    let label = swap(&label, &faults);
                    let raw = write.get(label).ok_or_else(|| rejected(400, format!("{k}: unknown label {label}")))?;
                    frames.push((can_key.clone(), *raw as f64));
                }
                Codec::Numeric { can_key, scale, integer } => {
                    let x = v.as_f64().ok_or_else(|| rejected(400, format!("{k}: expected a number")))?;
                    let mut s = if st.no_unit(can_key) { 1.0 } else { *scale };
                    for f in &faults {
                        if let FaultSpec::WrongScale { factor, .. } = f {
                            s *= factor;
                        }
                    }
                    let mut raw = x * s;
                    if *integer {
                        raw = raw.round();
                    }
                    frames.push((can_key.clone(), raw));
                }
                Codec::Datetime { hours_key, minutes_key } => {
                    let t = v.as_str().and_then(parse_api_datetime).ok_or_else(|| rejected(400, format!("{k}: expected a datetime")))?;
                    let parts = crate::testgen::decompose_datetime(
                        &t,
                        &[(hours_key.clone(), crate::matching::Role::Hours), (minutes_key.clone(), crate::matching::Role::Minutes)],
                    )
                    .expect("both roles given");
                    frames.push((hours_key.clone(), parts[hours_key] as f64));
                    frames.push((minutes_key.clone(), parts[minutes_key] as f64));
                }
            }
        }
        for (can_key, raw) in frames {
            if st.dead(&can_key) {
                continue;
            }
            st.frame(&can_key, raw);
            let b = self.binding(&can_key);
            let vv = Rig::can_to_vv(b, raw);
            st.write(&b.vv_key.clone(), vv);
        }
        Ok(())
    }

    pub fn gateway_get(&self, path: &str) -> Result<Map<String, Value>, CallError> {
        let ep = self.endpoint_for(path, Method::Get)?;
        let mut st = self.state.lock().unwrap();
        let faults = st.endpoint_faults(path);
        let faults: Vec<&FaultSpec> = faults.iter().collect();
        let mut out = Map::new();
        let read_can = |st: &mut RigState, can_key: &str| -> Option<f64> {
            if st.dead(can_key) {
                return None;
            }
            let b = self.binding(can_key);
            let vv = st.read(&b.vv_key);
            let can = Rig::vv_to_can(b, vv);
            st.frame(can_key, can);
            Some(can)
        };
        for p in &ep.properties {
            let value = match &p.codec {
                Codec::Enum { can_key, read, boolean, .. } => {
                    let Some(can) = read_can(&mut st, can_key) else { continue };
                    match read.iter().find(|(r, _)| *r as f64 == can) {
                        Some((_, label)) => {
                            let label = swap(label, &faults);
                            if *boolean {
                                Value::Bool(label.eq_ignore_ascii_case("true"))
                            } else {
                                Value::String(label.to_string())
                            }
                        }
                        None => Value::Null,
                    }
                }
                Codec::Numeric { can_key, scale, integer } => {
                    let Some(can) = read_can(&mut st, can_key) else { continue };
                    let mut s = if st.no_unit(can_key) { 1.0 } else { *scale };
                    for f in &faults {
                        if let FaultSpec::WrongScale { factor, .. } = f {
                            s /= factor;
                        }
                    }
                    let x = can / s;
                    if *integer {
                        Value::from(x.round() as i64)
                    } else {
                        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
                    }
                }
                Codec::Datetime { hours_key, minutes_key } => {
                    let (Some(h), Some(m)) = (read_can(&mut st, hours_key), read_can(&mut st, minutes_key)) else { continue };
                    let date = chrono::NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
                    match recompose_datetime(date, h as i64, m as i64) {
                        Some(t) => Value::String(format_api_datetime(&t)),
                        None => Value::Null,
                    }
                }
            };
            out.insert(p.key.clone(), value);
        }
        Ok(out)
    }
}

impl RigApi for Rig {
    fn put(&self, endpoint: &str, body: &Map<String, Value>) -> Result<(), CallError> {
        self.gateway_put(endpoint, body)
    }

    fn get(&self, endpoint: &str) -> Result<Map<String, Value>, CallError> {
        self.gateway_get(endpoint)
    }

    fn vv_set(&self, key: &str, raw: f64) -> Result<(), CallError> {
        Rig::vv_set(self, key, raw).map_err(|e| rejected(404, e.to_string()))
    }

    fn vv_get(&self, key: &str) -> Result<f64, CallError> {
        Rig::vv_get(self, key).map_err(|e| rejected(404, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn climate() -> RigConfig {
        serde_json::from_value(json!({
            "endpoints": [{
                "path": "/climate",
                "methods": ["PUT", "GET"],
                "properties": [
                    {"key": "acMode", "codec": "enum", "can_key": "acMode_CAN",
                     "write": {"STANDARD": 0, "ECONOMY": 1}, "read": [[0, "STANDARD"], [1, "ECONOMY"], [2, "ECONOMY"]]},
                    {"key": "speed", "codec": "numeric", "can_key": "speed_CAN", "scale": 1.0},
                    {"key": "power", "codec": "numeric", "can_key": "power_CAN", "scale": 1000.0}
                ]
            }, {
                "path": "/alarm",
                "methods": ["PUT", "GET"],
                "properties": [
                    {"key": "alarmTime", "codec": "datetime", "hours_key": "alarmHr_CAN", "minutes_key": "alarmMin_CAN"},
                    {"key": "isAlarmActive", "codec": "enum", "can_key": "alarm_CAN", "boolean": true,
                     "write": {"TRUE": 1, "FALSE": 0}, "read": [[0, "FALSE"], [1, "TRUE"], [2, "TRUE"]]}
                ]
            }],
            "vv_bindings": [
                {"can_key": "acMode_CAN", "vv_key": "acMode", "enum_map": [[0, 0.0], [1, 2.0], [2, 3.0]]},
                {"can_key": "speed_CAN", "vv_key": "speed", "scale": 0.2777777777777778},
                {"can_key": "power_CAN", "vv_key": "power"},
                {"can_key": "alarmHr_CAN", "vv_key": "alarmHr"},
                {"can_key": "alarmMin_CAN", "vv_key": "alarmMin"},
                {"can_key": "alarm_CAN", "vv_key": "alarm", "enum_map": [[0, 0.0], [1, 1.0], [2, 2.0]]}
            ]
        }))
        .unwrap()
    }

    fn body(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn put_lands_in_vv_through_both_encodings() {
        let rig = Rig::new(climate()).unwrap();
        rig.gateway_put("/climate", &body(json!({"acMode": "ECONOMY"}))).unwrap();
        assert_eq!(rig.vv_get("acMode").unwrap(), 2.0);
        assert_eq!(rig.can_trace().len(), 1);
    }

    #[test]
    fn vv_preset_reads_back_converted() {
        let rig = Rig::new(climate()).unwrap();
        rig.vv_set("speed", 27.78).unwrap();
        let got = rig.gateway_get("/climate").unwrap();
        assert!((got["speed"].as_f64().unwrap() - 100.008).abs() < 1e-9);
        rig.vv_set("acMode", 3.0).unwrap();
        assert_eq!(rig.gateway_get("/climate").unwrap()["acMode"], "ECONOMY");
        assert_eq!(rig.vv_get("power").unwrap(), 0.0);
        assert!(matches!(rig.vv_get("nope"), Err(RigError::UnknownKey(_))));
    }

    #[test]
    fn unknown_paths_and_methods() {
        let rig = Rig::new(climate()).unwrap();
        assert!(matches!(rig.gateway_get("/nowhere"), Err(CallError::Rejected { status: 404, .. })));
        assert!(matches!(rig.gateway_put("/climate", &body(json!({"acMode": "TURBO"}))), Err(CallError::Rejected { status: 400, .. })));
    }

    #[test]
    fn datetime_and_boolean_round_trip() {
        let rig = Rig::new(climate()).unwrap();
        rig.gateway_put("/alarm", &body(json!({"alarmTime": "1970-01-01T07:45:00Z", "isAlarmActive": true}))).unwrap();
        assert_eq!(rig.vv_get("alarmHr").unwrap(), 7.0);
        assert_eq!(rig.vv_get("alarmMin").unwrap(), 45.0);
        let got = rig.gateway_get("/alarm").unwrap();
        assert_eq!(got["alarmTime"], "1970-01-01T07:45:00Z");
        assert_eq!(got["isAlarmActive"], true);
        assert_eq!(rig.can_trace().len(), 6);
    }

    #[test]
    fn each_fault_kind_is_observable() {
        let put_then_read = |fault: FaultSpec, payload: Value, vv: &str| -> f64 {
            let rig = Rig::new(climate()).unwrap();
            rig.inject_fault(fault).unwrap();
            rig.gateway_put("/climate", &body(payload)).unwrap();
            rig.vv_get(vv).unwrap()
        };
        assert_eq!(put_then_read(FaultSpec::WrongScale { endpoint: "/climate".into(), factor: 1000.0 }, json!({"power": 5.0}), "power"), 5_000_000.0);
        assert_eq!(
            put_then_read(
                FaultSpec::SwappedEnum { endpoint: "/climate".into(), label_a: "STANDARD".into(), label_b: "ECONOMY".into() },
                json!({"acMode": "STANDARD"}),
                "acMode"
            ),
            2.0
        );
        assert_eq!(put_then_read(FaultSpec::DeadSignal { can_key: "power_CAN".into() }, json!({"power": 5.0}), "power"), 0.0);
        assert_eq!(put_then_read(FaultSpec::StaleState { vv_key: "power".into() }, json!({"power": 5.0}), "power"), 0.0);
        assert_eq!(put_then_read(FaultSpec::WrongUnit { can_key: "power_CAN".into() }, json!({"power": 5.0}), "power"), 5.0);

        let rig = Rig::new(climate()).unwrap();
        assert!(rig.inject_fault(FaultSpec::WrongUnit { can_key: "speed_CAN".into() }).is_err());
        assert!(rig.inject_fault(FaultSpec::DeadSignal { can_key: "ghost".into() }).is_err());
    }

    #[test]
    fn config_errors() {
        let mut c = climate();
        c.vv_bindings.retain(|b| b.can_key != "power_CAN");
        assert!(matches!(Rig::new(c), Err(RigError::Config(_))));
    }
}
