//! Blocking HTTP client for a served rig.

use std::time::Duration;

use serde_json::{Map, Value};

use super::{CallError, CanFrame, FaultSpec, RigApi};

pub struct RigClient {
    base: String,
    agent: ureq::Agent,
}

impl RigClient {
    pub fn new(base: &str) -> RigClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        RigClient { base: base.trim_end_matches('/').to_string(), agent }
    }

    fn call(&self, method: &str, path: &str, body: Option<String>) -> Result<Value, CallError> {
        let url = format!("{}{}", self.base, path);
        let sent = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            ("PUT", Some(b)) => self.agent.put(&url).header("Content-Type", "application/json").send(b),
            ("POST", Some(b)) => self.agent.post(&url).header("Content-Type", "application/json").send(b),
            _ => unreachable!("client only issues GET, PUT and POST with bodies"),
        };
        let mut resp = sent.map_err(|e| CallError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| CallError::Unreachable(e.to_string()))?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or(text);
            return Err(CallError::Rejected { status, message });
        }
        serde_json::from_str(&text).map_err(|e| CallError::Rejected { status, message: format!("undecodable body: {e}") })
    }

    pub fn inject_fault(&self, fault: &FaultSpec) -> Result<(), CallError> {
        self.call("POST", "/_fault", Some(serde_json::to_string(fault).expect("fault serializes"))).map(|_| ())
    }

    pub fn can_trace(&self) -> Result<Vec<CanFrame>, CallError> {
        let v = self.call("GET", "/_trace", None)?;
        serde_json::from_value(v).map_err(|e| CallError::Rejected { status: 200, message: e.to_string() })
    }
}

impl RigApi for RigClient {
    fn put(&self, endpoint: &str, body: &Map<String, Value>) -> Result<(), CallError> {
        self.call("PUT", endpoint, Some(Value::Object(body.clone()).to_string())).map(|_| ())
    }

    fn get(&self, endpoint: &str) -> Result<Map<String, Value>, CallError> {
        match self.call("GET", endpoint, None)? {
            Value::Object(m) => Ok(m),
            other => Err(CallError::Rejected { status: 200, message: format!("expected an object, got {other}") }),
        }
    }

    fn vv_set(&self, key: &str, raw: f64) -> Result<(), CallError> {
        self.call("PUT", &format!("/_vv/{key}"), Some(Value::from(raw).to_string())).map(|_| ())
    }

    fn vv_get(&self, key: &str) -> Result<f64, CallError> {
        let v = self.call("GET", &format!("/_vv/{key}"), None)?;
        v.as_f64().ok_or_else(|| CallError::Rejected { status: 200, message: format!("VV value {v} is not a number") })
    }
}
