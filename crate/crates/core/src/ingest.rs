//! API specification ingestion.
//!
//! Reads the OpenAPI-style subset used by the gateway documentation (paths,
//! GET/PUT, property name/type/enum/format/description and the `x-unit`
//! extension) from YAML or JSON text, and projects it into per-method test
//! object sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ambiguous enumeration {0:?}: fewer than two labels")]
    AmbiguousEnum(String),
    #[error("unrecognised separator in enumeration {0:?}")]
    UnknownSeparator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Put,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Put => "PUT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(Method::Get),
            "PUT" => Ok(Method::Put),
            other => Err(format!("unsupported method {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclaredType {
    Boolean,
    Integer,
    Number,
    String,
    Enum,
    Datetime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDomain {
    Enumeration { labels: Vec<String> },
    NumericRange { min: Option<f64>, max: Option<f64> },
    Boolean,
    FreeText,
    Datetime,
}

impl ValueDomain {
    /// Labels usable for value matching: enumeration labels, or `TRUE`/`FALSE`.
    pub fn labels(&self) -> Option<Vec<String>> {
        match self {
            ValueDomain::Enumeration { labels } => Some(labels.clone()),
            ValueDomain::Boolean => Some(vec!["TRUE".to_string(), "FALSE".to_string()]),
            _ => None,
        }
    }
}

/// One API attribute `(k, v)`: the key plus the domain its values range over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiProperty {
    pub key: String,
    pub domain: ValueDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub declared_type: DeclaredType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub path: String,
    pub methods: Vec<Method>,
    pub properties: Vec<ApiProperty>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub endpoints: Vec<Endpoint>,
    pub source_path: String,
}

/// The properties transacted by one endpoint under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestObjectSet {
    pub endpoint: String,
    pub method: Method,
    pub properties: Vec<ApiProperty>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Yaml,
    Json,
}

impl Format {
    /// Guess from a file extension; anything that is not `.json` reads as YAML.
    pub fn from_path(path: &str) -> Format {
        if path.to_ascii_lowercase().ends_with(".json") {
            Format::Json
        } else {
            Format::Yaml
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "yaml" | "yml" | "yaml-like" => Ok(Format::Yaml),
            "json" | "json-like" => Ok(Format::Json),
            other => Err(format!("unknown spec format {other}")),
        }
    }
}

pub fn parse_spec(document: &str, format: Format) -> Result<ApiSpec, IngestError> {
    let root: Value = match format {
        Format::Yaml => {
            serde_yaml::from_str(document).map_err(|e| IngestError::Syntax(e.to_string()))?
        }
        Format::Json => {
            serde_json::from_str(document).map_err(|e| IngestError::Syntax(e.to_string()))?
        }
    };
    let root = root
        .as_object()
        .ok_or_else(|| IngestError::Schema("document root is not a mapping".into()))?;
    let paths = match root.get("paths") {
        Some(Value::Object(p)) => p,
        Some(Value::Null) | None => return Err(IngestError::Schema("no endpoints found".into())),
        Some(_) => return Err(IngestError::Schema("`paths` is not a mapping".into())),
    };

    let mut endpoints = Vec::new();
    for (path, item) in paths {
        if !path.starts_with('/') {
            return Err(IngestError::Schema(format!("path {path:?} does not begin with '/'")));
        }
        let Some(item) = item.as_object() else {
            return Err(IngestError::Schema(format!("path item {path} is not a mapping")));
        };
        let mut methods = Vec::new();
        let mut properties: Vec<ApiProperty> = Vec::new();
        // PUT first so its definitions win when both methods carry a schema.
        for method in [Method::Put, Method::Get] {
            let key = method.as_str().to_ascii_lowercase();
            let Some(op) = item.get(&key) else { continue };
            methods.push(method);
            let schema = match method {
                Method::Put => op.pointer("/requestBody/content").and_then(first_schema),
                Method::Get => op.pointer("/responses/200/content").and_then(first_schema),
            };
            if let Some(schema) = schema {
                let schema = resolve_ref(root, schema)?;
                for prop in parse_properties(root, schema)? {
                    if !properties.iter().any(|p| p.key == prop.key) {
                        properties.push(prop);
                    }
                }
            }
        }
        if methods.is_empty() {
            continue;
        }
        methods.sort();
        if methods.contains(&Method::Put) && properties.is_empty() {
            return Err(IngestError::Schema(format!("PUT endpoint {path} declares no properties")));
        }
        endpoints.push(Endpoint { path: path.clone(), methods, properties });
    }
    if endpoints.is_empty() {
        return Err(IngestError::Schema("no endpoints found".into()));
    }
    Ok(ApiSpec { endpoints, source_path: String::new() })
}

pub fn load_spec(path: &std::path::Path) -> Result<ApiSpec, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError::Syntax(format!("{}: {e}", path.display())))?;
    let mut spec = parse_spec(&text, Format::from_path(&path.to_string_lossy()))?;
    spec.source_path = path.display().to_string();
    Ok(spec)
}

fn first_schema(content: &Value) -> Option<&Value> {
    content.as_object()?.values().find_map(|media| media.get("schema"))
}

fn resolve_ref<'a>(root: &'a Map<String, Value>, schema: &'a Value) -> Result<&'a Value, IngestError> {
    let Some(reference) = schema.get("$ref").and_then(Value::as_str) else {
        return Ok(schema);
    };
    let Some(pointer) = reference.strip_prefix('#') else {
        return Err(IngestError::Schema(format!("external reference {reference} not supported")));
    };
    let mut cursor: Option<&Value> = None;
    for (i, part) in pointer.split('/').skip(1).enumerate() {
        cursor = if i == 0 { root.get(part) } else { cursor.and_then(|c| c.get(part)) };
    }
    cursor.ok_or_else(|| IngestError::Schema(format!("dangling reference {reference}")))
}

fn parse_properties(root: &Map<String, Value>, schema: &Value) -> Result<Vec<ApiProperty>, IngestError> {
    let Some(props) = schema.get("properties").and_then(Value::as_object) else {
        return Ok(Vec::new());
    };
    props
        .iter()
        .map(|(key, def)| parse_property(key, resolve_ref(root, def)?))
        .collect()
}

fn text_field(def: &Value, name: &str) -> Option<String> {
    def.get(name).and_then(Value::as_str).map(str::to_string)
}

fn parse_property(key: &str, def: &Value) -> Result<ApiProperty, IngestError> {
    let ty = def.get("type").and_then(Value::as_str).unwrap_or("string");
    let unit_text = text_field(def, "x-unit");
    let description = text_field(def, "description");

    let (domain, declared_type) = if let Some(raw) = def.get("enum") {
        let labels = match raw {
            Value::String(s) => normalize_informal_enum(s, true)?,
            Value::Array(items) => {
                let mut labels: Vec<String> = Vec::new();
                for item in items {
                    let label = match item {
                        Value::String(s) => s.trim().to_string(),
                        other => other.to_string(),
                    };
                    if !label.is_empty() && !labels.contains(&label) {
                        labels.push(label);
                    }
                }
                if labels.len() < 2 {
                    return Err(IngestError::AmbiguousEnum(raw.to_string()));
                }
                labels
            }
            other => return Err(IngestError::Schema(format!("enum of {key} is {other}"))),
        };
        (ValueDomain::Enumeration { labels }, DeclaredType::Enum)
    } else {
        match ty {
            "boolean" => (ValueDomain::Boolean, DeclaredType::Boolean),
            "integer" | "number" => {
                let min = def.get("minimum").and_then(Value::as_f64);
                let max = def.get("maximum").and_then(Value::as_f64);
                if let (Some(lo), Some(hi)) = (min, max) {
                    if lo > hi {
                        return Err(IngestError::Schema(format!("{key}: minimum {lo} > maximum {hi}")));
                    }
                }
                let declared = if ty == "integer" { DeclaredType::Integer } else { DeclaredType::Number };
                (ValueDomain::NumericRange { min, max }, declared)
            }
            "string" if def.get("format").and_then(Value::as_str) == Some("date-time") => {
                (ValueDomain::Datetime, DeclaredType::Datetime)
            }
            "string" => (ValueDomain::FreeText, DeclaredType::String),
            other => return Err(IngestError::Schema(format!("{key}: unsupported type {other}"))),
        }
    };
    Ok(ApiProperty { key: key.to_string(), domain, unit_text, description, declared_type })
}

const ENUM_SEPARATORS: [&str; 4] = [" or ", " OR ", "/", ","];

fn is_label_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '+')
}

/// Split an informally written enumeration such as `"STANDARD or ECONOMY"`.
///
/// Labels come back distinct and in source order. Anything left inside a
/// label that is not a plain identifier character means an unknown separator
/// was used and is rejected rather than guessed at.
pub fn normalize_informal_enum(text: &str, enum_declared: bool) -> Result<Vec<String>, IngestError> {
    const SENTINEL: char = '\u{1f}';
    let mut work = text.trim().to_string();
    if work.starts_with('[') && work.ends_with(']') {
        work = work[1..work.len() - 1].to_string();
    }
    for sep in ENUM_SEPARATORS {
        work = work.replace(sep, &SENTINEL.to_string());
    }
    let mut labels: Vec<String> = Vec::new();
    for part in work.split(SENTINEL) {
        let label = part.trim().trim_matches(|c| c == '"' || c == '\'').trim();
        if label.is_empty() {
            continue;
        }
        if !label.chars().all(is_label_char) {
            return Err(IngestError::UnknownSeparator(text.to_string()));
        }
        if !labels.iter().any(|l| l == label) {
            labels.push(label.to_string());
        }
    }
    if labels.is_empty() || (enum_declared && labels.len() < 2) {
        return Err(IngestError::AmbiguousEnum(text.to_string()));
    }
    Ok(labels)
}

/// One test object set per (endpoint, method), carrying every property once.
pub fn extract_test_objects(spec: &ApiSpec) -> Vec<TestObjectSet> {
    spec.endpoints
        .iter()
        .flat_map(|ep| {
            ep.methods.iter().map(move |&method| TestObjectSet {
                endpoint: ep.path.clone(),
                method,
                properties: ep.properties.clone(),
            })
        })
        .collect()
}

/// Render a spec back into the subset grammar `parse_spec` reads.
pub fn to_document(spec: &ApiSpec, format: Format) -> String {
    let mut paths = Map::new();
    for ep in &spec.endpoints {
        let mut props = Map::new();
        for p in &ep.properties {
            props.insert(p.key.clone(), property_schema(p));
        }
        let schema = serde_json::json!({ "type": "object", "properties": Value::Object(props) });
        let content = serde_json::json!({ "application/json": { "schema": schema } });
        let mut item = Map::new();
        for m in &ep.methods {
            match m {
                Method::Get => {
                    item.insert("get".into(), serde_json::json!({ "responses": { "200": { "content": content.clone() } } }));
                }
                Method::Put => {
                    item.insert("put".into(), serde_json::json!({ "requestBody": { "content": content.clone() } }));
                }
            }
        }
        paths.insert(ep.path.clone(), Value::Object(item));
    }
    let doc = serde_json::json!({
        "openapi": "3.0.0",
        "info": { "title": "vehicle api", "version": "1.0" },
        "paths": Value::Object(paths),
    });
    match format {
        Format::Yaml => serde_yaml::to_string(&doc).expect("json value serialises as yaml"),
        Format::Json => serde_json::to_string_pretty(&doc).expect("json value serialises"),
    }
}

fn property_schema(p: &ApiProperty) -> Value {
    let mut m = Map::new();
    match &p.domain {
        ValueDomain::Enumeration { labels } => {
            m.insert("type".into(), "string".into());
            m.insert("enum".into(), labels.iter().map(|l| Value::String(l.clone())).collect());
        }
        ValueDomain::NumericRange { min, max } => {
            let ty = if p.declared_type == DeclaredType::Integer { "integer" } else { "number" };
            m.insert("type".into(), ty.into());
            if let Some(lo) = min {
                m.insert("minimum".into(), serde_json::json!(lo));
            }
            if let Some(hi) = max {
                m.insert("maximum".into(), serde_json::json!(hi));
            }
        }
        ValueDomain::Boolean => {
            m.insert("type".into(), "boolean".into());
        }
        ValueDomain::FreeText => {
            m.insert("type".into(), "string".into());
        }
        ValueDomain::Datetime => {
            m.insert("type".into(), "string".into());
            m.insert("format".into(), "date-time".into());
        }
    }
    if let Some(u) = &p.unit_text {
        m.insert("x-unit".into(), u.clone().into());
    }
    if let Some(d) = &p.description {
        m.insert("description".into(), d.clone().into());
    }
    Value::Object(m)
}
