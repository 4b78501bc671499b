//! Stage orchestration: each stage reads the previous stage's artifact from
//! disk and writes its own, so any stage can be rerun on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{record_replay, HttpTransport, LlmBackend, RuleTransport, StoreMode, Transport, DEFAULT_MAX_RETRIES};
use crate::executor::{run_cases, TestOutcome};
use crate::forge::{Manifest, MANIFEST_FILE, RIG_FILE};
use crate::ingest::{extract_test_objects, load_spec, TestObjectSet};
use crate::matching::{map_all, Lexicons, MatchOutcome, Matcher, MatcherBackend, RuleBackend, Skipped, Strictness};
use crate::report::{build_report, emit_report, ReportFormat, ReportInputs, RunReport};
use crate::rig::{start_rig, CanFrame, RigClient, RigConfig};
use crate::tables::{parse_can_table, parse_vv_table, CanTable, VvTable};
use crate::testgen::{generate_test_cases, parse_test_plan, render_test_plan, GenConfig, TestCase};
use crate::units::UnitRegistry;

pub const OBJECTS_FILE: &str = "test_objects.json";
pub const MATCHES_FILE: &str = "matches.json";
pub const CASES_FILE: &str = "cases.json";
pub const PLAN_FILE: &str = "plan.txt";
pub const OUTCOMES_FILE: &str = "outcomes.json";
pub const REPORT_RECORD_FILE: &str = "report.rec";
pub const REPORT_TEXT_FILE: &str = "report.txt";

/// URL that makes the remote backend answer through the local rule matcher.
pub const LOCAL_RULES_URL: &str = "rules:";

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

fn fail(stage: &'static str) -> impl Fn(&dyn fmt::Display) -> StageError {
    move |e| StageError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Rules,
    Remote,
    Replay,
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rules" => Ok(BackendKind::Rules),
            "remote" => Ok(BackendKind::Remote),
            "replay" => Ok(BackendKind::Replay),
            _ => Err(format!("unknown backend {s:?} (rules, remote, replay)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Remote endpoint; `rules:` answers locally through the wire contract.
    pub url: Option<String>,
    /// Replay store: read by `replay`, appended to by `remote`.
    pub store: Option<PathBuf>,
    pub max_retries: u32,
    pub parallelism: usize,
    pub lexicons: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { kind: BackendKind::Rules, url: None, store: None, max_retries: DEFAULT_MAX_RETRIES, parallelism: 4, lexicons: None }
    }
}

fn rules(cfg: &BackendConfig) -> Result<RuleBackend, StageError> {
    let lex = match &cfg.lexicons {
        Some(dir) => Lexicons::from_dir(dir).map_err(|e| fail("backend")(&e))?,
        None => Lexicons::bundled(),
    };
    Ok(RuleBackend::new(lex, UnitRegistry::bundled()))
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn MatcherBackend>, StageError> {
    let err = fail("backend");
    match cfg.kind {
        BackendKind::Rules => Ok(Box::new(rules(cfg)?)),
        BackendKind::Remote => {
            let url = cfg.url.as_deref().ok_or_else(|| err(&"remote backend needs --backend-url"))?;
            let inner: Box<dyn Transport> =
                if url == LOCAL_RULES_URL { Box::new(RuleTransport::new(rules(cfg)?)) } else { Box::new(HttpTransport::new(url)) };
            let transport: Arc<dyn Transport> = match &cfg.store {
                Some(path) => Arc::new(record_replay(path, StoreMode::Record, Some(inner)).map_err(|e| err(&e))?),
                None => Arc::from(inner),
            };
            Ok(Box::new(LlmBackend::new(transport, cfg.max_retries, cfg.parallelism)))
        }
        BackendKind::Replay => {
            let path = cfg.store.as_deref().ok_or_else(|| err(&"replay backend needs --replay-store"))?;
            let store = record_replay(path, StoreMode::Replay, None).map_err(|e| err(&e))?;
            Ok(Box::new(LlmBackend::new(Arc::new(store), cfg.max_retries, cfg.parallelism)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RigTarget {
    /// Start a loopback rig from a rig config for the duration of the run.
    Auto,
    Url(String),
}

impl FromStr for RigTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(RigTarget::Auto)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(RigTarget::Url(s.trim_end_matches('/').to_string()))
        } else {
            Err(format!("rig must be auto or an http(s) URL, got {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CasesArtifact {
    pub cases: Vec<TestCase>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutcomesArtifact {
    pub outcomes: Vec<TestOutcome>,
    pub can_log: Vec<CanFrame>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    let body = serde_json::to_string_pretty(value).expect("artifact serialises") + "\n";
    fs::write(path, body).map_err(|e| StageError { stage: "write", message: format!("{}: {e}", path.display()) })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(|e| StageError { stage: "read", message: format!("{}: {e}", path.display()) })?;
    serde_json::from_str(&text).map_err(|e| StageError { stage: "read", message: format!("{}: {e}", path.display()) })
}

fn read_text(path: &Path, stage: &'static str) -> Result<String, StageError> {
    fs::read_to_string(path).map_err(|e| StageError { stage, message: format!("{}: {e}", path.display()) })
}

pub fn ingest_stage(spec: &Path) -> Result<Vec<TestObjectSet>, StageError> {
    let spec = load_spec(spec).map_err(|e| fail("ingest")(&e))?;
    Ok(extract_test_objects(&spec))
}

pub fn load_tables(can: &Path, vv: &Path) -> Result<(CanTable, VvTable), StageError> {
    let can = parse_can_table(&read_text(can, "tables")?).map_err(|e| fail("tables")(&e))?;
    let vv = parse_vv_table(&read_text(vv, "tables")?).map_err(|e| fail("tables")(&e))?;
    Ok((can, vv))
}

pub fn match_stage(
    sets: &[TestObjectSet],
    can: &CanTable,
    vv: &VvTable,
    strictness: Strictness,
    backend: &dyn MatcherBackend,
    parallelism: usize,
) -> MatchOutcome {
    let units = UnitRegistry::bundled();
    let m = Matcher { backend, strictness, units: &units };
    map_all(sets, can, vv, &m, parallelism)
}

pub fn gen_stage(outcome: &MatchOutcome, config: &GenConfig) -> (CasesArtifact, String) {
    let (cases, skipped) = generate_test_cases(&outcome.results, config);
    let plan = render_test_plan(&cases);
    (CasesArtifact { cases, skipped }, plan)
}

pub fn load_rig_config(path: &Path) -> Result<RigConfig, StageError> {
    let config: RigConfig = read_json(path)?;
    config.validate().map_err(|e| fail("rig")(&e))?;
    Ok(config)
}

/// Execute a rendered plan. `Auto` starts a rig from `rig_config` and stops
/// it afterwards.
pub fn run_stage(plan: &str, target: &RigTarget, rig_config: Option<&Path>) -> Result<OutcomesArtifact, StageError> {
    let plan = parse_test_plan(plan).map_err(|e| fail("run")(&e))?;
    match target {
        RigTarget::Auto => {
            let path = rig_config.ok_or_else(|| fail("run")(&"--rig auto needs a rig config"))?;
            let handle = start_rig(load_rig_config(path)?, 0).map_err(|e| fail("run")(&e))?;
            let client = RigClient::new(&handle.url());
            let outcomes = run_cases(&plan.cases, &client);
            Ok(OutcomesArtifact { outcomes, can_log: handle.rig.can_trace() })
        }
        RigTarget::Url(url) => {
            let client = RigClient::new(url);
            let outcomes = run_cases(&plan.cases, &client);
            Ok(OutcomesArtifact { outcomes, can_log: client.can_trace().unwrap_or_default() })
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: PathBuf,
    pub can_table: PathBuf,
    pub vv_table: PathBuf,
    pub strictness: Strictness,
    pub backend: BackendConfig,
    pub rig: RigTarget,
    /// Defaults to `rig.json` beside the spec.
    pub rig_config: Option<PathBuf>,
    /// Defaults to `manifest.rec` beside the spec, if present.
    pub manifest: Option<PathBuf>,
    pub gen: GenConfig,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(spec: &Path, can_table: &Path, vv_table: &Path, out: &Path) -> RunConfig {
        RunConfig {
            spec: spec.into(),
            can_table: can_table.into(),
            vv_table: vv_table.into(),
            strictness: Strictness::Moderate,
            backend: BackendConfig::default(),
            rig: RigTarget::Auto,
            rig_config: None,
            manifest: None,
            gen: GenConfig::default(),
            out: out.into(),
        }
    }

    fn beside_spec(&self, name: &str) -> Option<PathBuf> {
        let p = self.spec.parent().unwrap_or(Path::new(".")).join(name);
        p.exists().then_some(p)
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub const META_FILE: &str = "run_meta.json";

/// Run parameters the report needs besides the stage artifacts. Each stage
/// fills in its own part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub spec: String,
    pub strictness: Strictness,
    pub backend: String,
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn update_meta(dir: &Path, f: impl FnOnce(&mut RunMeta)) -> Result<(), StageError> {
    let path = dir.join(META_FILE);
    let mut meta: RunMeta = if path.exists() { read_json(&path)? } else { RunMeta::default() };
    f(&mut meta);
    write_json(&path, &meta)
}

/// Rebuild the report from the artifacts in `dir` and write both renderings.
pub fn report_from_dir(dir: &Path, manifest: Option<&Path>) -> Result<RunReport, StageError> {
    let meta: RunMeta = read_json(&dir.join(META_FILE))?;
    let sets: Vec<TestObjectSet> = read_json(&dir.join(OBJECTS_FILE))?;
    let matches: MatchOutcome = read_json(&dir.join(MATCHES_FILE))?;
    let cases: CasesArtifact = read_json(&dir.join(CASES_FILE))?;
    let run: OutcomesArtifact = read_json(&dir.join(OUTCOMES_FILE))?;
    let manifest = match manifest {
        Some(p) => Some(Manifest::load(p).map_err(|e| fail("manifest")(&e))?),
        None => None,
    };
    let report = build_report(ReportInputs {
        spec: &meta.spec,
        strictness: meta.strictness,
        backend: &meta.backend,
        sets: &sets,
        matches: &matches,
        gen_skipped: &cases.skipped,
        cases: &cases.cases,
        outcomes: &run.outcomes,
        can_log: &run.can_log,
        timings_ms: meta.timings_ms,
        ground_truth: manifest.as_ref().map(|m| m.ground_truth_cases.as_slice()),
    });
    fs::write(dir.join(REPORT_RECORD_FILE), emit_report(&report, ReportFormat::Record)).map_err(|e| fail("write")(&e))?;
    fs::write(dir.join(REPORT_TEXT_FILE), emit_report(&report, ReportFormat::Human)).map_err(|e| fail("write")(&e))?;
    Ok(report)
}

/// Every stage in order, writing each artifact under `cfg.out`.
pub fn run_e2e(cfg: &RunConfig) -> Result<RunReport, StageError> {
    fs::create_dir_all(&cfg.out).map_err(|e| fail("write")(&e))?;
    let out = |name: &str| cfg.out.join(name);
    let mut meta = RunMeta { spec: cfg.spec.display().to_string(), strictness: cfg.strictness, ..Default::default() };

    let t = Instant::now();
    let sets = ingest_stage(&cfg.spec)?;
    let (can, vv) = load_tables(&cfg.can_table, &cfg.vv_table)?;
    write_json(&out(OBJECTS_FILE), &sets)?;
    meta.timings_ms.insert("ingest".to_string(), millis(t));

    let t = Instant::now();
    let backend = make_backend(&cfg.backend)?;
    meta.backend = backend.name().to_string();
    let matches = match_stage(&sets, &can, &vv, cfg.strictness, backend.as_ref(), cfg.backend.parallelism);
    write_json(&out(MATCHES_FILE), &matches)?;
    meta.timings_ms.insert("match".to_string(), millis(t));

    let t = Instant::now();
    let (cases, plan) = gen_stage(&matches, &cfg.gen);
    write_json(&out(CASES_FILE), &cases)?;
    fs::write(out(PLAN_FILE), &plan).map_err(|e| fail("write")(&e))?;
    meta.timings_ms.insert("generate".to_string(), millis(t));

    let t = Instant::now();
    let rig_config = cfg.rig_config.clone().or_else(|| cfg.beside_spec(RIG_FILE));
    let run = run_stage(&plan, &cfg.rig, rig_config.as_deref())?;
    write_json(&out(OUTCOMES_FILE), &run)?;
    meta.timings_ms.insert("run".to_string(), millis(t));
    write_json(&out(META_FILE), &meta)?;

    let manifest = cfg.manifest.clone().or_else(|| cfg.beside_spec(MANIFEST_FILE));
    report_from_dir(&cfg.out, manifest.as_deref())
}
