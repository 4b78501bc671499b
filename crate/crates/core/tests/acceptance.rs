//! Acceptance suite. Run with `cargo test --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;

use vapitest::backend::{complete_typed, BackendRequest, Field, FieldType, ScriptedTransport, Task};
use vapitest::executor::{run_case, Verdict};
use vapitest::forge::{forge, score_against_manifest, score_pseudocode, Corpus, ForgeOptions, Profile};
use vapitest::ingest::{extract_test_objects, Method};
use vapitest::matching::assign::{tiered_assignment, Cell, EPS};
use vapitest::matching::{match_keys, score_keys, BackendError, Category, Lexicons, MatchOutcome, RuleBackend, Strictness};
use vapitest::report::{emit_report, ReportFormat, RunReport};
use vapitest::rig::{start_rig, Codec, Rig, RigClient, RigConfig};
use vapitest::testgen::{ApiValue, GenConfig, TestCase};
use vapitest::units::{convert, convert_exact, Quantity, UnitRegistry};
use vapitest::workflow::{
    gen_stage, match_stage, read_json, run_e2e, BackendConfig, BackendKind, RunConfig, CASES_FILE, MATCHES_FILE, OUTCOMES_FILE,
    PLAN_FILE, REPORT_RECORD_FILE,
};

const SEED: u64 = 2024;

const C1_APIS: usize = 20;
const C1_BUDGET: Duration = Duration::from_secs(30);
const C2_APIS: usize = 20;
const C2_FAULTS: usize = 7;
const C2_BUDGET: Duration = Duration::from_secs(60);
const C3_PER_CATEGORY: usize = 100;
const C3_MIN_PRECISION: f64 = 0.95;
const C3_MIN_RECALL: f64 = 0.90;
const C3_BUDGET: Duration = Duration::from_secs(10);
const C5_MIN_CASES: usize = 500;
const C5_RAW_TOL: f64 = 1e-6;
const C6_SAMPLES: usize = 1000;
const C6_REL_TOL: f64 = 1e-12;
const C7_MAX_RETRIES: u32 = 4;
const C9_INSTANCES: usize = 200;
const C9_MAX_SIDE: usize = 8;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn written(opts: ForgeOptions) -> (TempDir, Corpus) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = forge(&opts).map_err(|e| e.to_string()).unwrap();
    corpus.write_to(dir.path()).unwrap();
    (dir, corpus)
}

fn config(dir: &Path, strictness: Strictness) -> RunConfig {
    let mut cfg = RunConfig::new(&dir.join("spec.yaml"), &dir.join("can_table.txt"), &dir.join("vv_table.txt"), &dir.join("out"));
    cfg.strictness = strictness;
    cfg
}

fn run(dir: &Path, strictness: Strictness) -> Result<RunReport, String> {
    run_e2e(&config(dir, strictness)).map_err(|e| e.to_string())
}

fn matches_of(c: &Corpus, strictness: Strictness) -> MatchOutcome {
    let sets = extract_test_objects(&c.spec);
    match_stage(&sets, &c.can, &c.vv, strictness, &RuleBackend::bundled(), 4)
}

fn c1_clean_corpus() -> Outcome {
    let t = Instant::now();
    let (dir, corpus) = written(ForgeOptions { seed: SEED, profile: Profile::Clean, size: C1_APIS, faults: 0 });
    let report = run(dir.path(), Strictness::Moderate)?;
    let elapsed = t.elapsed();
    ensure!(corpus.manifest.apis.len() == C1_APIS, "{} APIs forged", corpus.manifest.apis.len());
    ensure!(report.verdicts.len() == C1_APIS, "{} APIs judged", report.verdicts.len());
    let m = &report.metrics;
    ensure!(m.pass_rate == Some(1.0), "pass rate {:?}", m.pass_rate);
    ensure!(m.precision == Some(1.0) && m.recall == Some(1.0), "case P {:?} R {:?}", m.precision, m.recall);
    let matches: MatchOutcome = read_json(&dir.path().join("out").join(MATCHES_FILE)).map_err(|e| e.to_string())?;
    let keys = score_against_manifest(&matches, &corpus.manifest).map_err(|e| e.to_string())?;
    ensure!(keys.overall.precision == 1.0 && keys.overall.recall == 1.0, "key P {} R {}", keys.overall.precision, keys.overall.recall);
    ensure!(elapsed < C1_BUDGET, "took {elapsed:?}");
    Ok(format!("{C1_APIS} APIs, {} cases, pass rate 1, P = R = 1, {elapsed:.2?}", m.cases.pass))
}

fn c2_fault_detection() -> Outcome {
    let t = Instant::now();
    let (dir, corpus) = written(ForgeOptions { seed: SEED, profile: Profile::Clean, size: C2_APIS, faults: C2_FAULTS });
    let report = run(dir.path(), Strictness::Moderate)?;
    let elapsed = t.elapsed();
    let kinds: BTreeSet<&str> = corpus.manifest.faults.iter().map(|f| f.kind()).collect();
    ensure!(kinds.len() == 5, "fault kinds {kinds:?}");
    let seeded: BTreeSet<(String, Method)> = corpus.manifest.faulted_apis.iter().map(|a| (a.endpoint.clone(), a.method)).collect();
    ensure!(seeded.len() == C2_FAULTS, "{} faulted APIs in manifest", seeded.len());
    let flagged: BTreeSet<(String, Method)> =
        report.verdicts.iter().filter(|v| v.outcome != Verdict::Pass).map(|v| (v.endpoint.clone(), v.method)).collect();
    let missed = seeded.difference(&flagged).count();
    let false_pos = flagged.difference(&seeded).count();
    ensure!(report.verdicts.len() == C2_APIS, "{} APIs judged", report.verdicts.len());
    ensure!(missed == 0 && false_pos == 0, "missed {missed}, false positives {false_pos}");
    ensure!(report.verdicts.iter().all(|v| v.outcome != Verdict::Error), "an API errored");
    ensure!(elapsed < C2_BUDGET, "took {elapsed:?}");
    Ok(format!("{} of {C2_FAULTS} faulted APIs flagged, 0 of {} clean flagged, kinds {kinds:?}, {elapsed:.2?}", flagged.len(), C2_APIS - C2_FAULTS))
}

fn c3_fuzzy_recovery() -> Outcome {
    let t = Instant::now();
    let corpus = forge(&ForgeOptions { seed: SEED, profile: Profile::Fuzzy5, size: C3_PER_CATEGORY, faults: 0 }).map_err(|e| e.to_string())?;
    let matches = matches_of(&corpus, Strictness::Moderate);
    let score = score_against_manifest(&matches, &corpus.manifest).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let fuzzy = [Category::Spelling, Category::Abbreviation, Category::Format, Category::Logical, Category::Semantic];
    let mut line = format!("P {:.3}", score.overall.precision);
    for c in fuzzy {
        let prf = score.per_category.get(&c).ok_or_else(|| format!("no {c} pairs scored"))?;
        ensure!(prf.ground_truth == C3_PER_CATEGORY, "{c}: {} pairs", prf.ground_truth);
        if c != Category::Semantic {
            ensure!(prf.recall >= C3_MIN_RECALL, "{c} recall {:.3}", prf.recall);
        }
        line.push_str(&format!(", {c} R {:.2}", prf.recall));
    }
    ensure!(score.overall.precision >= C3_MIN_PRECISION, "precision {:.3}", score.overall.precision);
    let coverage = score.lexicon_coverage.ok_or("no lexicon coverage")?;
    ensure!(elapsed < C3_BUDGET, "took {elapsed:?}");
    Ok(format!("{line}, lexicon coverage {coverage:.2}, {elapsed:.2?}"))
}

type KeyTriple = (String, Method, String, String, String);
type ValuePair = (String, Method, String, String, String);

fn matched_sets(m: &MatchOutcome) -> (BTreeSet<KeyTriple>, BTreeSet<ValuePair>) {
    let mut keys = BTreeSet::new();
    let mut values = BTreeSet::new();
    for r in &m.results {
        for l in &r.links {
            keys.insert((r.endpoint.clone(), r.method, r.property.key.clone(), l.can.key.clone(), l.vv.key.clone()));
            if let Some((api_can, _)) = &l.value_chain {
                for p in &api_can.pairs {
                    values.insert((r.endpoint.clone(), r.method, r.property.key.clone(), p.left.clone(), p.right.clone()));
                }
            }
        }
    }
    (keys, values)
}

fn c4_strictness_monotonicity() -> Outcome {
    let corpus = forge(&ForgeOptions { seed: SEED, profile: Profile::Pseudocode, size: 30, faults: 0 }).map_err(|e| e.to_string())?;
    let mut prev: Option<(BTreeSet<KeyTriple>, BTreeSet<ValuePair>, f64, f64)> = None;
    let mut line = Vec::new();
    for s in Strictness::ALL {
        let m = matches_of(&corpus, s);
        let (keys, values) = matched_sets(&m);
        let prf = score_pseudocode(&m, &corpus.manifest).map_err(|e| e.to_string())?;
        if let Some((pk, pv, pp, pr)) = &prev {
            ensure!(pk.is_subset(&keys), "{s}: key pairs of the previous level are lost");
            ensure!(pv.is_subset(&values), "{s}: value pairs of the previous level are lost");
            ensure!(prf.precision <= *pp, "{s}: precision rose {pp:.3} → {:.3}", prf.precision);
            ensure!(prf.recall >= *pr, "{s}: recall fell {pr:.3} → {:.3}", prf.recall);
        }
        line.push(format!("{s} P {:.2} R {:.2} ({} value pairs)", prf.precision, prf.recall, values.len()));
        prev = Some((keys, values, prf.precision, prf.recall));
    }
    Ok(line.join(", "))
}

/// Independent model of the rig: the VV table as a plain map, driven only by
/// the rig configuration.
struct VvModel<'a> {
    cfg: &'a RigConfig,
    vv: BTreeMap<String, f64>,
}

impl<'a> VvModel<'a> {
    fn new(cfg: &'a RigConfig) -> VvModel<'a> {
        VvModel { cfg, vv: cfg.vv_bindings.iter().map(|b| (b.vv_key.clone(), b.default_raw)).collect() }
    }

    fn store_can(&mut self, can_key: &str, can: f64) {
        let b = self.cfg.vv_bindings.iter().find(|b| b.can_key == can_key).unwrap();
        let vv = match &b.enum_map {
            Some(map) => map.iter().find(|(c, _)| *c as f64 == can).map_or(f64::NAN, |(_, v)| *v),
            None => can * b.scale,
        };
        self.vv.insert(b.vv_key.clone(), vv);
    }

    fn load_can(&self, can_key: &str) -> f64 {
        let b = self.cfg.vv_bindings.iter().find(|b| b.can_key == can_key).unwrap();
        let vv = self.vv[&b.vv_key];
        match &b.enum_map {
            Some(map) => map.iter().find(|(_, v)| *v == vv).map_or(f64::NAN, |(c, _)| *c as f64),
            None => vv / b.scale,
        }
    }

    /// Encoded CAN frames for a PUT body, or `None` when the gateway must refuse it.
    fn encode(&self, endpoint: &str, body: &BTreeMap<String, ApiValue>) -> Option<Vec<(String, f64)>> {
        let ep = self.cfg.endpoints.iter().find(|e| e.path == endpoint && e.methods.contains(&Method::Put))?;
        let mut frames = Vec::new();
        for (k, v) in body {
            let p = ep.properties.iter().find(|p| &p.key == k)?;
            match (&p.codec, v) {
                (Codec::Enum { can_key, write, boolean, .. }, _) => {
                    let label = match v {
                        ApiValue::Bool(b) if *boolean => if *b { "TRUE" } else { "FALSE" }.to_string(),
                        ApiValue::Text(s) => s.clone(),
                        _ => return None,
                    };
                    frames.push((can_key.clone(), *write.get(&label)? as f64));
                }
                (Codec::Numeric { can_key, scale, integer }, _) => {
                    let raw = v.as_f64()? * scale;
                    frames.push((can_key.clone(), if *integer { raw.round() } else { raw }));
                }
                (Codec::Datetime { hours_key, minutes_key }, ApiValue::Text(s)) => {
                    // YYYY-MM-DDTHH:MM:SSZ
                    let hh: f64 = s.get(11..13)?.parse().ok()?;
                    let mm: f64 = s.get(14..16)?.parse().ok()?;
                    frames.push((hours_key.clone(), hh));
                    frames.push((minutes_key.clone(), mm));
                }
                _ => return None,
            }
        }
        Some(frames)
    }

    fn decode(&self, endpoint: &str, key: &str) -> Option<ApiValue> {
        let ep = self.cfg.endpoints.iter().find(|e| e.path == endpoint)?;
        let p = ep.properties.iter().find(|p| p.key == key)?;
        match &p.codec {
            Codec::Enum { can_key, read, boolean, .. } => {
                let can = self.load_can(can_key);
                let label = &read.iter().find(|(r, _)| *r as f64 == can)?.1;
                Some(if *boolean { ApiValue::Bool(label.eq_ignore_ascii_case("true")) } else { ApiValue::Text(label.clone()) })
            }
            Codec::Numeric { can_key, scale, integer } => {
                let x = self.load_can(can_key) / scale;
                Some(if *integer { ApiValue::Int(x.round() as i64) } else { ApiValue::Number(x) })
            }
            Codec::Datetime { hours_key, minutes_key } => {
                let (h, m) = (self.load_can(hours_key), self.load_can(minutes_key));
                if !(0.0..24.0).contains(&h) || !(0.0..60.0).contains(&m) {
                    return None;
                }
                Some(ApiValue::Text(format!("1970-01-01T{:02}:{:02}:00Z", h as u32, m as u32)))
            }
        }
    }

    fn verdict(&mut self, case: &TestCase) -> Verdict {
        let same = |want: &ApiValue, got: &ApiValue| match (want.as_f64(), got.as_f64()) {
            (Some(a), Some(b)) => (a - b).abs() <= C5_RAW_TOL,
            _ => want == got,
        };
        let ok = match case.method {
            Method::Put => match self.encode(&case.endpoint, &case.api_payload) {
                None => false,
                Some(frames) => {
                    for (can_key, raw) in frames {
                        self.store_can(&can_key, raw);
                    }
                    case.expected_vv.iter().all(|(k, want)| self.vv.get(k).is_some_and(|got| (want - got).abs() <= C5_RAW_TOL))
                }
            },
            Method::Get => {
                for (k, raw) in &case.vv_preset {
                    self.vv.insert(k.clone(), *raw);
                }
                case.expected_api.iter().all(|(k, want)| self.decode(&case.endpoint, k).is_some_and(|got| same(want, &got)))
            }
        };
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

struct Pool {
    rig: RigConfig,
    cases: Vec<TestCase>,
}

fn c5_pools() -> Vec<Pool> {
    let mut pools = Vec::new();
    for (i, profile) in Profile::ALL.into_iter().filter(|p| *p != Profile::Fuzzy5).enumerate() {
        for s in Strictness::ALL {
            let corpus = forge(&ForgeOptions { seed: SEED + i as u64, profile, size: 12, faults: 0 }).unwrap();
            let m = matches_of(&corpus, s);
            let (cases, _) = gen_stage(&m, &GenConfig::default());
            pools.push(Pool { rig: corpus.rig, cases: cases.cases });
        }
    }
    pools
}

fn mutate(case: &mut TestCase, pick: usize, delta: f64) {
    let bump = |v: &mut ApiValue| match v {
        ApiValue::Bool(b) => *b = !*b,
        ApiValue::Int(i) => *i += 1,
        ApiValue::Number(x) => *x += delta,
        ApiValue::Text(s) => s.push('X'),
    };
    match case.method {
        Method::Put => {
            let n = case.expected_vv.len().max(1);
            if let Some(v) = case.expected_vv.values_mut().nth(pick % n) {
                *v += delta;
            }
        }
        Method::Get => {
            let n = case.expected_api.len().max(1);
            if let Some(v) = case.expected_api.values_mut().nth(pick % n) {
                bump(v);
            }
        }
    }
}

fn c5_oracle_equivalence() -> Outcome {
    let pools = c5_pools();
    let total: usize = pools.iter().map(|p| p.cases.len()).sum();
    ensure!(total >= C5_MIN_CASES, "only {total} generated cases");

    // Every generated case, in plan order, over HTTP.
    let mut verdicts = BTreeMap::<Verdict, usize>::new();
    for pool in &pools {
        let handle = start_rig(pool.rig.clone(), 0).map_err(|e| e.to_string())?;
        let client = RigClient::new(&handle.url());
        let mut model = VvModel::new(&pool.rig);
        for case in &pool.cases {
            let got = run_case(case, &client).verdict;
            let want = model.verdict(case);
            ensure!(got == want, "{}: executor {got:?}, oracle {want:?}", case.id);
            *verdicts.entry(got).or_default() += 1;
        }
    }

    // Random subsequences with corrupted expectations, in process.
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig { cases: 64, failure_persistence: None, ..RunnerConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let n_pools = pools.len();
    let strategy = (0..n_pools, prop::collection::vec((any::<prop::sample::Index>(), any::<bool>(), 0usize..8, 0.5f64..50.0), 1..40));
    let checked = std::cell::Cell::new(0usize);
    runner
        .run(&strategy, |(p, picks)| {
            let pool = &pools[p];
            if pool.cases.is_empty() {
                return Ok(());
            }
            let rig = Rig::new(pool.rig.clone()).unwrap();
            let mut model = VvModel::new(&pool.rig);
            for (idx, corrupt, pick, delta) in picks {
                let mut case = idx.get(&pool.cases).clone();
                if corrupt {
                    mutate(&mut case, pick, delta);
                }
                let got = run_case(&case, &rig).verdict;
                let want = model.verdict(&case);
                prop_assert_eq!(got, want, "case {}", case.id);
                checked.set(checked.get() + 1);
            }
            Ok::<(), TestCaseError>(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{total} generated cases agree ({verdicts:?}), plus {} randomised replays", checked.get()))
}

fn c6_units() -> Outcome {
    // Scales to the base unit, written out independently of the registry.
    let dims: [(&str, &[(&str, f64)]); 3] = [
        ("speed", &[("m/s", 1.0), ("km/h", 1000.0 / 3600.0), ("mph", 1609.344 / 3600.0)]),
        ("power", &[("W", 1.0), ("kW", 1000.0)]),
        ("time", &[("s", 1.0), ("min", 60.0), ("h", 3600.0)]),
    ];
    let reg = UnitRegistry::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for (dim, units) in dims {
        for _ in 0..C6_SAMPLES {
            let (a, sa) = units[rng.gen_range(0..units.len())];
            let (b, sb) = units[rng.gen_range(0..units.len())];
            let x = rng.gen_range(-6.0f64..6.0).exp2().powi(3) * if rng.gen() { 1.0 } else { -1.0 };
            let ua = reg.parse_unit(a).map_err(|e| e.to_string())?;
            let ub = reg.parse_unit(b).map_err(|e| e.to_string())?;
            ensure!(ua.dimension == dim, "{a} is {}", ua.dimension);
            let y = convert(&Quantity::new(x, ua.clone()), &ub).map_err(|e| e.to_string())?;
            let back = convert(&y, &ua).map_err(|e| e.to_string())?.magnitude;
            let direct = x * sa / sb;
            let rel_there = ((y.magnitude - direct) / direct).abs();
            let rel_back = ((back - x) / x).abs();
            worst = worst.max(rel_there).max(rel_back);
            ensure!(rel_there <= C6_REL_TOL, "{x} {a}→{b}: {} vs {direct}", y.magnitude);
            ensure!(rel_back <= C6_REL_TOL, "{x} {a}→{b}→{a}: {back}");
        }
    }
    let kw = convert(&Quantity::new(1.0, reg.parse_unit("kW").unwrap()), &reg.parse_unit("W").unwrap()).unwrap();
    ensure!(kw.magnitude == 1000.0, "1 kW = {} W", kw.magnitude);
    let kmh = convert(&Quantity::new(3.6, reg.parse_unit("km/h").unwrap()), &reg.parse_unit("m/s").unwrap()).unwrap();
    ensure!(kmh.magnitude == 1.0, "3.6 km/h = {} m/s", kmh.magnitude);
    let exact =
        convert_exact(Ratio::new(36, 10), &reg.parse_unit("km/h").unwrap(), &reg.parse_unit("m/s").unwrap()).map_err(|e| e.to_string())?;
    ensure!(exact == Ratio::from_integer(1), "exact 3.6 km/h = {exact} m/s");
    Ok(format!("{} samples per dimension, worst relative error {worst:.1e}, 1 kW = 1000 W, 3.6 km/h = 1 m/s", C6_SAMPLES))
}

fn c7_typed_retry() -> Outcome {
    let req = |max_retries| BackendRequest {
        task: Task::UnitInfer,
        inputs: json!({"key": "vehicleSpeed"}),
        output_schema: vec![Field::new("unit", FieldType::Text)],
        strictness: Strictness::Moderate,
        max_retries,
    };
    let bad = ["not json", "[1, 2]", r#"{"result": {}}"#, r#"{"outputs": {"unit": 7}}"#, r#"{"outputs": {}}"#];
    let good = r#"{"outputs": {"unit": "km/h"}}"#;
    let mut harnesses = 0;
    for max_retries in 0..=C7_MAX_RETRIES {
        for failures in 0..=max_retries + 2 {
            let mut script: Vec<String> = (0..failures).map(|i| bad[i as usize % bad.len()].to_string()).collect();
            script.push(good.to_string());
            let t = ScriptedTransport::new(script);
            let r = complete_typed(&req(max_retries), &t);
            let sent = t.seen().len() as u32;
            ensure!(sent <= max_retries + 1, "{sent} attempts with max_retries {max_retries}");
            if failures <= max_retries {
                let r = r.map_err(|e| format!("{failures} failures, max {max_retries}: {e}"))?;
                ensure!(r.attempts_used == failures + 1 && r.attempts_used == sent, "attempts_used {}", r.attempts_used);
            } else {
                ensure!(
                    matches!(&r, Err(BackendError::SchemaViolation { attempts, .. }) if *attempts == max_retries + 1),
                    "{failures} failures, max {max_retries}: {r:?}"
                );
                ensure!(sent == max_retries + 1, "exhausted after {sent} sends");
            }
            harnesses += 1;
        }
    }

    // Record once through the rule transport, then replay twice.
    let (dir, _) = written(ForgeOptions { seed: SEED, profile: Profile::Mixed, size: 10, faults: 2 });
    let store = dir.path().join("store.jsonl");
    let run_with = |kind: BackendKind, url: Option<&str>, out: &str| -> Result<(RunReport, Vec<Vec<u8>>), String> {
        let mut cfg = config(dir.path(), Strictness::Relaxed);
        cfg.out = dir.path().join(out);
        cfg.backend = BackendConfig { kind, url: url.map(str::to_string), store: Some(store.clone()), ..BackendConfig::default() };
        let mut report = run_e2e(&cfg).map_err(|e| e.to_string())?;
        report.timings_ms.clear();
        let files = [MATCHES_FILE, CASES_FILE, PLAN_FILE, OUTCOMES_FILE].iter().map(|f| fs::read(cfg.out.join(f)).unwrap()).collect();
        Ok((report, files))
    };
    let (recorded, rec_files) = run_with(BackendKind::Remote, Some("rules:"), "record")?;
    let (first, first_files) = run_with(BackendKind::Replay, None, "replay1")?;
    let (second, second_files) = run_with(BackendKind::Replay, None, "replay2")?;
    ensure!(first_files == second_files, "replay artifacts differ between runs");
    ensure!(first_files == rec_files, "replay artifacts differ from the recording run");
    let (r1, r2) = (emit_report(&first, ReportFormat::Record), emit_report(&second, ReportFormat::Record));
    ensure!(r1 == r2, "replay reports differ");
    ensure!(recorded.outcomes == first.outcomes, "replayed outcomes differ from the recording");
    ensure!(fs::read(dir.path().join("replay1").join(REPORT_RECORD_FILE)).is_ok(), "no report written");

    // The recorded store answers exactly the requests the rule matcher does directly.
    let direct = dir.path().join("direct");
    let mut cfg = config(dir.path(), Strictness::Relaxed);
    cfg.out = direct.clone();
    run_e2e(&cfg).map_err(|e| e.to_string())?;
    ensure!(fs::read(direct.join(MATCHES_FILE)).unwrap() == rec_files[0], "remote answers differ from the rule matcher");
    Ok(format!("{harnesses} scripted harnesses, replay bit-identical over {} artifacts", first_files.len()))
}

fn c8_accounting() -> Outcome {
    let mut checked = 0;
    let mut skipped = 0;
    for profile in Profile::ALL {
        for seed in [SEED, SEED + 1] {
            let (dir, corpus) = written(ForgeOptions { seed, profile, size: 10, faults: 0 });
            for s in Strictness::ALL {
                let r = run(dir.path(), s)?;
                let a = &r.accounting;
                let expected: usize = extract_test_objects(&corpus.spec).iter().map(|set| set.properties.len()).sum();
                ensure!(a.extracted.len() == expected, "{profile}/{s}: {} of {expected} properties extracted", a.extracted.len());
                ensure!(a.is_partition(), "{profile}/{s}: tested + skipped is not a partition");
                ensure!(a.skipped.len() == r.skipped.len(), "{profile}/{s}: skipped list and accounting disagree");
                ensure!(
                    r.skipped.iter().all(|k| !k.reason.as_str().is_empty() && !k.detail.is_empty()),
                    "{profile}/{s}: a skipped property has no reason"
                );
                checked += 1;
                skipped += r.skipped.len();
            }
        }
    }
    Ok(format!("{checked} runs over every profile partition exactly, {skipped} skips all carry reasons"))
}

/// Exhaustive tiered assignment: per tier, the maximum total score, and among
/// optimal assignments the one whose per-row choices rank first.
fn brute_force(cells: &[Vec<Option<Cell>>], names: &[&str], tiers: &[f64]) -> Vec<(usize, usize)> {
    let n_right = names.len();
    let mut left_done = vec![false; cells.len()];
    let mut right_done = vec![false; n_right];
    let mut pairs = Vec::new();
    for &floor in tiers {
        let options: Vec<(usize, Vec<usize>)> = (0..cells.len())
            .filter(|&i| !left_done[i])
            .map(|i| {
                let mut js: Vec<usize> = (0..n_right).filter(|&j| !right_done[j] && cells[i][j].is_some_and(|c| c.score >= floor)).collect();
                js.sort_by(|&a, &b| {
                    let (ca, cb) = (cells[i][a].unwrap(), cells[i][b].unwrap());
                    cb.score.total_cmp(&ca.score).then(ca.category.cmp(&cb.category)).then(names[a].cmp(names[b])).then(a.cmp(&b))
                });
                (i, js)
            })
            .filter(|(_, js)| !js.is_empty())
            .collect();

        fn best(cells: &[Vec<Option<Cell>>], opts: &[(usize, Vec<usize>)], used: &mut Vec<bool>) -> f64 {
            let Some(((i, js), rest)) = opts.split_first() else { return 0.0 };
            let mut top = best(cells, rest, used);
            for &j in js {
                if !used[j] {
                    used[j] = true;
                    top = top.max(cells[*i][j].unwrap().score + best(cells, rest, used));
                    used[j] = false;
                }
            }
            top
        }
        fn first(
            cells: &[Vec<Option<Cell>>],
            opts: &[(usize, Vec<usize>)],
            used: &mut Vec<bool>,
            acc: f64,
            target: f64,
            chosen: &mut Vec<(usize, usize)>,
        ) -> bool {
            let Some(((i, js), rest)) = opts.split_first() else { return acc >= target - EPS };
            for &j in js {
                if !used[j] {
                    used[j] = true;
                    chosen.push((*i, j));
                    if first(cells, rest, used, acc + cells[*i][j].unwrap().score, target, chosen) {
                        return true;
                    }
                    chosen.pop();
                    used[j] = false;
                }
            }
            first(cells, rest, used, acc, target, chosen)
        }

        let target = best(cells, &options, &mut vec![false; n_right]);
        let mut chosen = Vec::new();
        assert!(first(cells, &options, &mut vec![false; n_right], 0.0, target, &mut chosen));
        for &(i, j) in &chosen {
            left_done[i] = true;
            right_done[j] = true;
        }
        pairs.extend(chosen);
    }
    pairs.sort();
    pairs
}

const WORDS: [&str; 16] = [
    "battery", "charge", "level", "door", "lock", "status", "window", "position", "seat", "heater", "mode", "fan", "speed", "target",
    "cabin", "temperature",
];

fn random_key(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let camel: String = words
        .iter()
        .enumerate()
        .map(|(i, w)| if i == 0 { w.to_string() } else { w[..1].to_uppercase() + &w[1..] })
        .collect();
    camel
}

fn variant(rng: &mut ChaCha8Rng, key: &str) -> String {
    let snake: String = key.chars().flat_map(|c| if c.is_uppercase() { vec!['_', c.to_ascii_lowercase()] } else { vec![c] }).collect();
    match rng.gen_range(0..5) {
        0 => key.to_string(),
        1 => snake,
        2 => snake.to_uppercase(),
        3 => {
            let mut chars: Vec<char> = key.chars().collect();
            let i = rng.gen_range(1..chars.len() - 1);
            chars.remove(i);
            chars.into_iter().collect()
        }
        _ => snake.split('_').map(|w| &w[..w.len().min(3)]).collect::<Vec<_>>().join("_"),
    }
}

fn unique(rng: &mut ChaCha8Rng, n: usize, f: impl Fn(&mut ChaCha8Rng) -> String) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut tries = 0;
    while out.len() < n && tries < 200 {
        let k = f(rng);
        if !out.contains(&k) {
            out.push(k);
        }
        tries += 1;
    }
    out
}

fn c9_assignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let lex = Lexicons::bundled();
    let backend = RuleBackend::bundled();
    let mut paired = 0;
    for n in 0..C9_INSTANCES {
        let strictness = Strictness::ALL[n % 3];
        let (n_right, n_left) = (rng.gen_range(1..=C9_MAX_SIDE), rng.gen_range(1..=C9_MAX_SIDE));
        let right = unique(&mut rng, n_right, random_key);
        let left = unique(&mut rng, n_left, |r| {
            let base = right.choose(r).unwrap().clone();
            if r.gen_bool(0.8) {
                variant(r, &base)
            } else {
                random_key(r)
            }
        });
        let cells: Vec<Vec<Option<Cell>>> = left
            .iter()
            .map(|l| {
                right
                    .iter()
                    .map(|r| score_keys(l, r, &lex).filter(|(_, s)| *s >= strictness.threshold()).map(|(category, score)| Cell { category, score }))
                    .collect()
            })
            .collect();
        let names: Vec<&str> = right.iter().map(String::as_str).collect();
        let want = brute_force(&cells, &names, &strictness.tiers());
        let got: Vec<(usize, usize)> = match_keys(&left, &right, strictness, &backend)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|c| (left.iter().position(|l| *l == c.left_key).unwrap(), right.iter().position(|r| *r == c.right_key).unwrap()))
            .collect();
        let mut got_sorted = got.clone();
        got_sorted.sort();
        ensure!(got_sorted == want, "instance {n} ({strictness}): {left:?} vs {right:?}\n got {got_sorted:?}\n want {want:?}");
        paired += want.len();
    }

    // Dense random scores exercise ties and displacement harder than names do.
    for n in 0..C9_INSTANCES {
        let rows = rng.gen_range(1..=C9_MAX_SIDE);
        let cols = rng.gen_range(1..=C9_MAX_SIDE);
        let names: Vec<String> = (0..cols).map(|j| format!("r{}", (j * 7 + n) % cols)).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let cells: Vec<Vec<Option<Cell>>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        rng.gen_bool(0.45).then(|| Cell {
                            category: Category::ALL[rng.gen_range(0..Category::ALL.len())],
                            score: [0.6, 0.7, 0.8, 0.9, 0.95, 1.0][rng.gen_range(0..6)] - rng.gen_range(0..3) as f64 * 0.01,
                        })
                    })
                    .collect()
            })
            .collect();
        let tiers = Strictness::Relaxed.tiers();
        ensure!(tiered_assignment(&cells, &names, &tiers) == brute_force(&cells, &names, &tiers), "random-score instance {n} differs");
    }
    Ok(format!("{C9_INSTANCES} name instances ({paired} pairs) and {C9_INSTANCES} random-score instances match the exhaustive oracle"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("1 clean corpus sanity", c1_clean_corpus),
        ("2 failure detection", c2_fault_detection),
        ("3 fuzzy matching recovery", c3_fuzzy_recovery),
        ("4 strictness monotonicity", c4_strictness_monotonicity),
        ("5 executor oracle equivalence", c5_oracle_equivalence),
        ("6 unit engine", c6_units),
        ("7 typed retry and replay", c7_typed_retry),
        ("8 report accounting", c8_accounting),
        ("9 assignment optimality", c9_assignment_optimality),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                println!("FAIL  criterion {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
