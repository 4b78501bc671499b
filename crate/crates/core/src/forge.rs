//! Seeded synthetic corpora: a spec, CAN and VV tables and a rig config,
//! plus a manifest recording the true mappings, the perturbation applied to
//! each key, the deliberately unmappable attributes, the injected faults and
//! the test cases a perfect pipeline would generate.
//!
//! The manifest is computed from the forge's own model of the corpus, never
//! by running the matcher or the generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::Prf;
use crate::ingest::{to_document, ApiProperty, ApiSpec, DeclaredType, Endpoint, Format, Method, ValueDomain};
use crate::matching::lexicon::SYNONYMS;
use crate::matching::{Category, MatchOutcome, Role, SkipReason};
use crate::rig::{Codec, EndpointConfig, FaultSpec, PropertyConfig, RigConfig, VvBinding};
use crate::tables::{serialize_can_table, serialize_vv_table, CanSignal, CanTable, Encoding, VvEntry, VvTable};
use crate::testgen::{ApiValue, TestCase};

pub const SPEC_FILE: &str = "spec.yaml";
pub const CAN_FILE: &str = "can_table.txt";
pub const VV_FILE: &str = "vv_table.txt";
pub const RIG_FILE: &str = "rig.json";
pub const MANIFEST_FILE: &str = "manifest.rec";

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("corpus size must be at least 1")]
    ZeroSize,
    #[error("{requested} faults requested but only {eligible} endpoints can carry one")]
    TooManyFaults { requested: usize, eligible: usize },
    #[error("could not draw a fresh {0} after many attempts")]
    Exhausted(&'static str),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ManifestMismatch {
    #[error("results name {0}, which the manifest does not list")]
    UnknownApi(String),
    #[error("manifest has no ground truth for this measure")]
    NoGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Clean,
    Fuzzy5,
    Pseudocode,
    Units,
    Dependencies,
    Mixed,
}

impl Profile {
    pub const ALL: [Profile; 6] =
        [Profile::Clean, Profile::Fuzzy5, Profile::Pseudocode, Profile::Units, Profile::Dependencies, Profile::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Clean => "clean",
            Profile::Fuzzy5 => "fuzzy5",
            Profile::Pseudocode => "pseudocode",
            Profile::Units => "units",
            Profile::Dependencies => "dependencies",
            Profile::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown profile {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeOptions {
    pub seed: u64,
    pub profile: Profile,
    /// Endpoints; for `fuzzy5` also the number of perturbed pairs per category.
    pub size: usize,
    pub faults: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiRef {
    pub endpoint: String,
    pub method: Method,
}

impl fmt::Display for ApiRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.method, self.endpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueLink {
    pub role: Role,
    /// The key the matcher sees on the API side (`<key>Hours` for roles).
    pub api_key: String,
    pub can_key: String,
    pub vv_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    pub api: String,
    pub can: String,
    pub vv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMapping {
    pub endpoint: String,
    pub method: Method,
    pub key: String,
    pub links: Vec<TrueLink>,
    pub values: Vec<TrueValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub endpoint: String,
    pub method: Method,
    pub api_key: String,
    pub can_key: String,
    pub category: Category,
    /// Semantic rewrites only: whether the synonym is in the bundled lexicon.
    pub in_lexicon: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltKind {
    Primary,
    Abbreviation,
    Substate,
    HeldOut,
    Decoy,
}

impl AltKind {
    pub fn valid(self) -> bool {
        self != AltKind::Decoy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltTruth {
    pub label: String,
    pub kind: AltKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTruth {
    pub endpoint: String,
    pub method: Method,
    pub key: String,
    pub label: String,
    pub can_key: String,
    pub alternatives: Vec<AltTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unmappable {
    pub endpoint: String,
    pub method: Method,
    pub key: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub options: ForgeOptions,
    pub apis: Vec<ApiRef>,
    pub true_mappings: Vec<TrueMapping>,
    pub perturbations: Vec<Perturbation>,
    pub pseudocode: Vec<PseudoTruth>,
    pub unmappable: Vec<Unmappable>,
    pub faults: Vec<FaultSpec>,
    pub faulted_apis: Vec<ApiRef>,
    pub ground_truth_cases: Vec<TestCase>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, ForgeError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ForgeError::Manifest(e.to_string()))
    }

    /// Share of semantic rewrites the bundled synonym lexicon covers.
    pub fn lexicon_coverage(&self) -> Option<f64> {
        let sem: Vec<&Perturbation> = self.perturbations.iter().filter(|p| p.category == Category::Semantic).collect();
        (!sem.is_empty()).then(|| sem.iter().filter(|p| p.in_lexicon).count() as f64 / sem.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: ApiSpec,
    pub can: CanTable,
    pub vv: VvTable,
    pub rig: RigConfig,
    pub manifest: Manifest,
}

impl Corpus {
    /// File name and contents of every artifact, in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            (SPEC_FILE, to_document(&self.spec, Format::Yaml)),
            (CAN_FILE, serialize_can_table(&self.can)),
            (VV_FILE, serialize_vv_table(&self.vv)),
            (RIG_FILE, serde_json::to_string_pretty(&self.rig).expect("rig config serialises") + "\n"),
            (MANIFEST_FILE, serde_json::to_string_pretty(&self.manifest).expect("manifest serialises") + "\n"),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), ForgeError> {
        fs::create_dir_all(dir)?;
        for (name, body) in self.files() {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Word-level predicates. These are deliberately simple and separate from the
// matcher's scoring so that the manifest does not inherit its mistakes.

pub fn words(key: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = key.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let prev = if i > 0 { chars[i - 1] } else { ' ' };
        let boundary = c.is_ascii_uppercase() && prev.is_ascii_lowercase();
        if boundary && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(c.to_ascii_lowercase());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn squash(key: &str) -> String {
    key.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

fn shortens(short: &str, long: &str) -> bool {
    if short == long {
        return true;
    }
    if short.is_empty() || short.len() >= long.len() || short.as_bytes()[0] != long.as_bytes()[0] {
        return false;
    }
    let mut it = long.chars();
    short.chars().all(|c| it.any(|l| l == c))
}

const STATES: [(&str, &str); 8] = [
    ("locked", "unlocked"),
    ("open", "closed"),
    ("engaged", "disengaged"),
    ("connected", "disconnected"),
    ("visible", "hidden"),
    ("on", "off"),
    ("active", "inactive"),
    ("enabled", "disabled"),
];

fn state_opposite(w: &str) -> Option<&'static str> {
    STATES.iter().find_map(|(a, b)| if *a == w { Some(*b) } else if *b == w { Some(*a) } else { None })
}

const HELD_OUT: [(&str, &str); 5] = [
    ("sunroof", "moonroof"),
    ("odometer", "mileage"),
    ("windscreen", "windshield"),
    ("gearbox", "transmission"),
    ("indicator", "blinker"),
];

fn lexicon_pairs() -> Vec<(String, String)> {
    SYNONYMS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let mut cols = l.split('\t').map(str::trim);
            Some((cols.next()?.to_string(), cols.next()?.to_string()))
        })
        .collect()
}

struct Vocab {
    lexicon: Vec<(String, String)>,
}

impl Vocab {
    fn new() -> Vocab {
        Vocab { lexicon: lexicon_pairs() }
    }

    fn synonyms(&self, a: &str, b: &str) -> bool {
        let same_class = |x: &str, y: &str| {
            let mut class: BTreeSet<&str> = BTreeSet::from([x]);
            loop {
                let before = class.len();
                for (p, q) in &self.lexicon {
                    if class.contains(p.as_str()) || class.contains(q.as_str()) {
                        class.insert(p);
                        class.insert(q);
                    }
                }
                if class.len() == before {
                    break;
                }
            }
            class.contains(y)
        };
        a != b && (same_class(a, b) || HELD_OUT.iter().any(|(p, q)| (*p == a && *q == b) || (*p == b && *q == a)))
    }

    fn in_lexicon(&self, a: &str, b: &str) -> bool {
        self.lexicon.iter().any(|(p, q)| (p == a && q == b) || (p == b && q == a))
    }

    /// Could any matching rule plausibly link the two keys? Conservative: a
    /// `true` only means the pair is unsafe to place side by side.
    fn related(&self, a: &str, b: &str) -> bool {
        let (fa, fb) = (squash(a), squash(b));
        if fa == fb || strsim::levenshtein(&fa, &fb) <= 2 || fa.starts_with(&fb) || fb.starts_with(&fa) {
            return true;
        }
        let (ta, tb) = (words(a), words(b));
        let initials = |t: &[String]| t.iter().filter_map(|w| w.chars().next()).collect::<String>();
        if initials(&ta) == fb || initials(&tb) == fa {
            return true;
        }
        if ta.contains(&"not".to_string()) || tb.contains(&"not".to_string()) {
            let sa: BTreeSet<&String> = ta.iter().collect();
            let sb: BTreeSet<&String> = tb.iter().collect();
            if sa.symmetric_difference(&sb).count() <= 3 {
                return true;
            }
        }
        if ta.len() == tb.len() {
            let diffs: Vec<(&String, &String)> = ta.iter().zip(&tb).filter(|(x, y)| x != y).collect();
            if diffs.len() <= 1 {
                return true;
            }
            if diffs.iter().all(|(x, y)| self.synonyms(x, y) || shortens(x, y) || shortens(y, x) || state_opposite(x) == Some(y.as_str())) {
                return true;
            }
        }
        false
    }

    /// Which perturbation categories the pair exhibits. A sound perturbation
    /// exhibits exactly one.
    fn categories(&self, api: &str, can: &str) -> Vec<Category> {
        let (fa, fc) = (squash(api), squash(can));
        let (ta, tc) = (words(api), words(can));
        let mut out = Vec::new();
        if api != can && fa == fc {
            out.push(Category::Format);
        }
        if fa != fc && strsim::levenshtein(&fa, &fc) <= 2 && fa.len().max(fc.len()) >= 6 {
            out.push(Category::Spelling);
        }
        let initials: String = ta.iter().filter_map(|w| w.chars().next()).collect();
        let tokenwise = ta.len() == tc.len() && ta.iter().zip(&tc).all(|(l, s)| shortens(s, l));
        if fc.len() < fa.len() && ((ta.len() >= 2 && initials == fc) || tokenwise) {
            out.push(Category::Abbreviation);
        }
        if let Some((last, head)) = ta.split_last() {
            if let Some(opp) = state_opposite(last) {
                let mut negated = head.to_vec();
                negated.push("not".into());
                negated.push(opp.into());
                if negated == tc {
                    out.push(Category::Logical);
                }
            }
        }
        if ta.len() == tc.len() {
            let diffs: Vec<(&String, &String)> = ta.iter().zip(&tc).filter(|(x, y)| x != y).collect();
            if diffs.len() == 1 && self.synonyms(diffs[0].0, diffs[0].1) {
                out.push(Category::Semantic);
            }
        }
        out
    }
}

/// Perturbation categories of an API/CAN key pair, by the forge's own
/// predicates (bundled and held-out synonyms count as synonyms).
pub fn perturbation_categories(api_key: &str, can_key: &str) -> Vec<Category> {
    Vocab::new().categories(api_key, can_key)
}

// ---------------------------------------------------------------------------
// Corpus model.

const ENDPOINTS: [&str; 24] = [
    "climate", "battery", "alarm", "seats", "mirrors", "windows", "wipers", "trunk", "doors", "charging", "lighting",
    "cabin", "roof", "pedals", "steering", "brakes", "cruise", "parking", "radio", "display", "sensors", "tailgate",
    "hood", "washer",
];

const NOUNS: [&str; 24] = [
    "fan", "heater", "seat", "mirror", "window", "wiper", "trunk", "door", "battery", "charger", "engine", "horn",
    "light", "cabin", "roof", "pedal", "steering", "brake", "cruise", "lane", "socket", "display", "sensor", "washer",
];

const ATTRS: [&str; 16] = [
    "level", "mode", "target", "limit", "timer", "status", "request", "position", "intensity", "setpoint", "duration",
    "setting", "counter", "threshold", "profile", "offset",
];

const QUALS: [&str; 12] =
    ["front", "rear", "left", "right", "driver", "passenger", "auxiliary", "main", "upper", "lower", "inner", "outer"];

const LABEL_SETS: [&[&str]; 8] = [
    &["STANDARD", "ECONOMY", "TURBO"],
    &["LOW", "MEDIUM", "HIGH"],
    &["AUTO", "MANUAL", "SCHEDULED"],
    &["PARK", "REVERSE", "NEUTRAL", "DRIVE"],
    &["COMFORT", "SPORT", "INDIVIDUAL"],
    &["NORMAL", "QUIET", "BOOST"],
    &["NONE", "PARTIAL", "FULL"],
    &["CLOSED", "VENTING", "OPEN"],
];

const BOOL_LABELS: [(&str, &str); 3] = [("Active", "Inactive"), ("On", "Off"), ("TRUE", "FALSE")];

struct PseudoSet {
    on: &'static str,
    off: &'static str,
    primary: &'static str,
    abbreviation: &'static str,
    substates: &'static [&'static str],
    held_out: &'static [&'static str],
}

const PSEUDO_SETS: [PseudoSet; 5] = [
    PseudoSet { on: "ACTIVE", off: "INACTIVE", primary: "Active", abbreviation: "Actv", substates: &["Ringing", "Snoozed"], held_out: &["Alerting"] },
    PseudoSet { on: "LOCKED", off: "UNLOCKED", primary: "Locked", abbreviation: "Lckd", substates: &["Deadlocked"], held_out: &["Superlocked"] },
    PseudoSet { on: "RUNNING", off: "STOPPED", primary: "Running", abbreviation: "Rnng", substates: &["Idling"], held_out: &["Cranking"] },
    PseudoSet { on: "HEATING", off: "IDLE", primary: "Heating", abbreviation: "Htng", substates: &["Preheating"], held_out: &["Warming"] },
    PseudoSet { on: "CHARGING", off: "IDLE", primary: "Charging", abbreviation: "Chrg", substates: &["Balancing"], held_out: &["Trickling"] },
];

/// Unit name → (dimension, factor to the dimension's base unit).
const UNITS: [(&str, &str, f64); 8] = [
    ("m/s", "speed", 1.0),
    ("km/h", "speed", 1.0 / 3.6),
    ("mph", "speed", 0.44704),
    ("W", "power", 1.0),
    ("kW", "power", 1000.0),
    ("s", "time", 1.0),
    ("min", "time", 60.0),
    ("h", "time", 3600.0),
];

fn unit_factor(name: &str) -> f64 {
    UNITS.iter().find(|u| u.0 == name).map(|u| u.2).expect("forge unit")
}

/// (api, can, vv, min, max) with distinct API and CAN units.
const SCALED: [(&str, &str, &str, f64, f64); 6] = [
    ("km/h", "m/s", "km/h", 0.0, 250.0),
    ("kW", "W", "kW", 0.0, 150.0),
    ("min", "s", "s", 0.0, 45.0),
    ("mph", "km/h", "km/h", 0.0, 155.0),
    ("h", "min", "min", 1.0, 24.0),
    ("W", "kW", "W", 0.0, 7400.0),
];

#[derive(Debug, Clone)]
struct NumericShape {
    min: Option<f64>,
    max: Option<f64>,
    integer: bool,
    api: Option<&'static str>,
    api_in_description: bool,
    can: Option<&'static str>,
    vv: Option<&'static str>,
}

impl NumericShape {
    fn effective(&self) -> Option<(&'static str, &'static str, &'static str)> {
        let api = self.api.or(self.can).or(self.vv)?;
        let can = self.can.or(self.api).or(self.vv)?;
        let vv = self.vv.unwrap_or(can);
        Some((api, can, vv))
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Enum(Vec<String>),
    Boolean { on: String, off: String },
    Numeric(NumericShape),
    Datetime { hours: String, minutes: Option<String> },
    Pseudo { set: usize, order: Vec<(String, AltKind)> },
    FreeText,
}

#[derive(Debug, Clone)]
struct Prop {
    key: String,
    /// `None`: the property has no CAN counterpart.
    can_key: Option<String>,
    shape: Shape,
    perturbation: Option<(Category, bool)>,
    unmappable: Option<SkipReason>,
}

impl Prop {
    fn clean(key: String, shape: Shape) -> Prop {
        Prop { can_key: Some(key.clone()), key, shape, perturbation: None, unmappable: None }
    }

    fn vv_key(can_key: &str) -> String {
        format!("{can_key}_vv")
    }
}

#[derive(Debug, Clone)]
struct Ep {
    path: String,
    hint: Option<String>,
    method: Method,
    props: Vec<Prop>,
    distractors: Vec<(String, Vec<String>)>,
    /// Has an enum and a unit-scaled numeric, so any fault kind fits.
    fault_ready: bool,
}

impl Ep {
    fn api(&self) -> ApiRef {
        ApiRef { endpoint: self.path.clone(), method: self.method }
    }

    fn keys(&self) -> Vec<String> {
        let mut k: Vec<String> = Vec::new();
        for p in &self.props {
            k.push(p.key.clone());
            if let Some(c) = &p.can_key {
                k.push(c.clone());
            }
            if let Shape::Datetime { hours, minutes } = &p.shape {
                k.push(hours.clone());
                k.extend(minutes.clone());
            }
        }
        k.extend(self.distractors.iter().map(|d| d.0.clone()));
        k
    }
}

fn camel(words: &[&str]) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        if i == 0 {
            s.push_str(w);
        } else {
            let mut c = w.chars();
            if let Some(f) = c.next() {
                s.push(f.to_ascii_uppercase());
                s.push_str(c.as_str());
            }
        }
    }
    s
}

fn title(w: &str) -> String {
    let lower = w.to_ascii_lowercase();
    let mut c = lower.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

struct Forge {
    rng: ChaCha8Rng,
    vocab: Vocab,
    used: BTreeSet<String>,
}

const TRIES: usize = 20_000;

impl Forge {
    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        xs.choose(&mut self.rng).expect("non-empty vocabulary")
    }

    fn fresh_ok(&self, key: &str, around: &[String]) -> bool {
        squash(key).len() >= 10 && !self.used.contains(&squash(key)) && around.iter().all(|k| !self.vocab.related(key, k))
    }

    fn claim(&mut self, key: &str) {
        self.used.insert(squash(key));
    }

    /// A fresh `[qualifier] noun attribute` key unrelated to `around`.
    fn key(&mut self, around: &[String]) -> Result<String, ForgeError> {
        for _ in 0..TRIES {
            let mut w: Vec<&str> = Vec::new();
            if self.rng.gen_bool(0.6) {
                w.push(self.pick(&QUALS));
            }
            w.push(self.pick(&NOUNS));
            w.push(self.pick(&ATTRS));
            let k = camel(&w);
            if self.fresh_ok(&k, around) {
                self.claim(&k);
                return Ok(k);
            }
        }
        Err(ForgeError::Exhausted("key"))
    }

    fn labels(&mut self) -> Vec<String> {
        self.pick(&LABEL_SETS).iter().map(|s| s.to_string()).collect()
    }

    fn enum_prop(&mut self, around: &[String]) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let labels = self.labels();
        Ok(Prop::clean(k, Shape::Enum(labels)))
    }

    fn boolean_prop(&mut self, around: &[String]) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let (on, off) = *self.pick(&BOOL_LABELS);
        Ok(Prop::clean(k, Shape::Boolean { on: on.into(), off: off.into() }))
    }

    fn scaled_numeric(&mut self, around: &[String]) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let (api, can, vv, min, max) = *self.pick(&SCALED);
        let shape = NumericShape {
            min: Some(min),
            max: Some(max),
            integer: false,
            api: Some(api),
            api_in_description: false,
            can: Some(can),
            vv: Some(vv),
        };
        Ok(Prop::clean(k, Shape::Numeric(shape)))
    }

    fn datetime_prop(&mut self, around: &[String], abbreviated: bool, with_minutes: bool) -> Result<Prop, ForgeError> {
        for _ in 0..TRIES {
            let noun = *self.pick(&NOUNS);
            let lead = if self.rng.gen_bool(0.5) { *self.pick(&QUALS) } else { "departure" };
            let k = camel(&[lead, noun, "time"]);
            let (h, m) = if abbreviated { ("Hr", "Min") } else { ("Hours", "Minutes") };
            let hours = format!("{k}{h}");
            let minutes = format!("{k}{m}");
            if self.fresh_ok(&k, around) && !self.used.contains(&squash(&hours)) && !self.used.contains(&squash(&minutes)) {
                self.claim(&k);
                self.claim(&hours);
                self.claim(&minutes);
                return Ok(Prop {
                    key: k,
                    can_key: None,
                    shape: Shape::Datetime { hours, minutes: with_minutes.then_some(minutes) },
                    perturbation: None,
                    unmappable: (!with_minutes).then_some(SkipReason::MissingRole),
                });
            }
        }
        Err(ForgeError::Exhausted("datetime key"))
    }

    fn decoy(&mut self, primary: &str, avoid: &[&str]) -> String {
        loop {
            let mut chars: Vec<char> = primary.chars().collect();
            let mut idx: Vec<usize> = (1..chars.len()).collect();
            idx.shuffle(&mut self.rng);
            for &i in &idx[..2] {
                let orig = chars[i];
                let mut c = orig;
                while c == orig {
                    c = (b'a' + self.rng.gen_range(0..26)) as char;
                }
                chars[i] = c;
            }
            let d: String = chars.into_iter().collect();
            let far = avoid.iter().all(|a| strsim::levenshtein(&squash(a), &squash(&d)) > 2);
            if far && strsim::levenshtein(&squash(primary), &squash(&d)) == 2 {
                return d;
            }
        }
    }

    fn pseudo_prop(&mut self, around: &[String]) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let set = self.rng.gen_range(0..PSEUDO_SETS.len());
        let s = &PSEUDO_SETS[set];
        let mut avoid: Vec<&str> = vec![s.off, s.abbreviation];
        avoid.extend(s.substates);
        avoid.extend(s.held_out);
        let decoy = self.decoy(s.primary, &avoid);
        let mut order: Vec<(String, AltKind)> = vec![(s.primary.into(), AltKind::Primary), (s.abbreviation.into(), AltKind::Abbreviation)];
        order.extend(s.substates.iter().map(|x| (x.to_string(), AltKind::Substate)));
        order.extend(s.held_out.iter().map(|x| (x.to_string(), AltKind::HeldOut)));
        order.push((decoy, AltKind::Decoy));
        order[1..].shuffle(&mut self.rng);
        Ok(Prop::clean(k, Shape::Pseudo { set, order }))
    }

    // --- perturbations --------------------------------------------------

    fn perturbed(&mut self, category: Category, around: &[String]) -> Result<Prop, ForgeError> {
        for _ in 0..TRIES {
            let Some((api, can, shape, in_lexicon)) = self.draw_pair(category) else { continue };
            if !self.fresh_ok(&api, around) || self.used.contains(&squash(&can)) || squash(&can).len() < 3 {
                continue;
            }
            if around.iter().any(|k| self.vocab.related(&can, k)) {
                continue;
            }
            if self.vocab.categories(&api, &can) != [category] {
                continue;
            }
            self.claim(&api);
            self.claim(&can);
            return Ok(Prop { key: api, can_key: Some(can), shape, perturbation: Some((category, in_lexicon)), unmappable: None });
        }
        Err(ForgeError::Exhausted("perturbed pair"))
    }

    fn draw_pair(&mut self, category: Category) -> Option<(String, String, Shape, bool)> {
        let mut base: Vec<&str> = Vec::new();
        if self.rng.gen_bool(0.6) {
            base.push(self.pick(&QUALS));
        }
        let enum_shape = Shape::Enum(self.labels());
        match category {
            Category::Format => {
                base.push(self.pick(&NOUNS));
                base.push(self.pick(&ATTRS));
                let api = camel(&base);
                let can = match self.rng.gen_range(0..5) {
                    0 => base.iter().map(|w| w.to_ascii_uppercase()).collect::<Vec<_>>().join("_"),
                    1 => base.join("_"),
                    2 => base.join("-"),
                    3 => base.iter().map(|w| title(w)).collect::<String>(),
                    _ => base.concat().to_ascii_uppercase(),
                };
                Some((api, can, enum_shape, false))
            }
            Category::Spelling => {
                base.push(self.pick(&NOUNS));
                base.push(self.pick(&ATTRS));
                let api = camel(&base);
                let mut chars: Vec<char> = api.chars().collect();
                let edits = if self.rng.gen_bool(0.5) { 1 } else { 2 };
                for _ in 0..edits {
                    let inner: Vec<usize> =
                        (1..chars.len()).filter(|&i| chars[i].is_ascii_lowercase() && chars[i - 1].is_ascii_lowercase()).collect();
                    let i = *inner.choose(&mut self.rng)?;
                    match self.rng.gen_range(0..3) {
                        0 => {
                            let mut c = chars[i];
                            while c == chars[i] {
                                c = (b'a' + self.rng.gen_range(0..26)) as char;
                            }
                            chars[i] = c;
                        }
                        1 => chars.insert(i, chars[i]),
                        _ => {
                            if i + 1 < chars.len() && chars[i + 1].is_ascii_lowercase() && chars[i + 1] != chars[i] {
                                chars.swap(i, i + 1);
                            }
                        }
                    }
                }
                Some((api, chars.into_iter().collect(), enum_shape, false))
            }
            Category::Abbreviation => {
                base.push(self.pick(&NOUNS));
                base.push(self.pick(&ATTRS));
                let api = camel(&base);
                let can = if base.len() >= 3 && self.rng.gen_bool(0.4) {
                    base.iter().filter_map(|w| w.chars().next()).collect::<String>().to_ascii_uppercase()
                } else {
                    let cut: Vec<&str> = base.iter().map(|w| if w.len() > 3 { &w[..3] } else { *w }).collect();
                    camel(&cut)
                };
                Some((api, can, enum_shape, false))
            }
            Category::Logical => {
                base.push(self.pick(&NOUNS));
                let (a, b) = *self.pick(&STATES);
                let state = if self.rng.gen_bool(0.5) { a } else { b };
                let api = camel(&[base.as_slice(), &[state]].concat());
                let can = camel(&[base.as_slice(), &["not", state_opposite(state)?]].concat());
                let (on, off) = *self.pick(&BOOL_LABELS);
                Some((api, can, Shape::Boolean { on: on.into(), off: off.into() }, false))
            }
            Category::Semantic => {
                let held = self.rng.gen_bool(0.2);
                let (a, b) = if held {
                    let (a, b) = *self.pick(&HELD_OUT);
                    (a.to_string(), b.to_string())
                } else {
                    let i = self.rng.gen_range(0..self.vocab.lexicon.len());
                    self.vocab.lexicon[i].clone()
                };
                let (a, b) = if self.rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                let attr = *self.pick(&ATTRS);
                let mut api_w = base.clone();
                api_w.extend([a.as_str(), attr]);
                let mut can_w = base.clone();
                can_w.extend([b.as_str(), attr]);
                let in_lexicon = self.vocab.in_lexicon(&a, &b);
                Some((camel(&api_w), camel(&can_w), enum_shape, in_lexicon))
            }
            Category::Exact | Category::Pseudocode => None,
        }
    }

    // --- endpoint layouts -------------------------------------------------

    fn standard(&mut self, ep: &mut Ep, extras: bool) -> Result<(), ForgeError> {
        let p = self.enum_prop(&ep.keys())?;
        ep.props.push(p);
        let p = self.scaled_numeric(&ep.keys())?;
        ep.props.push(p);
        if extras && self.rng.gen_bool(0.5) {
            let p = self.boolean_prop(&ep.keys())?;
            ep.props.push(p);
        }
        if extras && self.rng.gen_bool(0.3) {
            let p = self.datetime_prop(&ep.keys(), false, true)?;
            ep.props.push(p);
        }
        ep.fault_ready = true;
        Ok(())
    }

    fn distractors(&mut self, ep: &mut Ep, n: usize) -> Result<(), ForgeError> {
        for _ in 0..n {
            let k = self.key(&ep.keys())?;
            let labels = self.labels();
            ep.distractors.push((k, labels));
        }
        Ok(())
    }

    fn fuzzy(&mut self, ep: &mut Ep, categories: &[Category]) -> Result<(), ForgeError> {
        for &c in categories {
            let p = self.perturbed(c, &ep.keys())?;
            ep.props.push(p);
        }
        self.distractors(ep, 2)
    }

    fn pseudocode(&mut self, ep: &mut Ep) -> Result<(), ForgeError> {
        let p = self.pseudo_prop(&ep.keys())?;
        ep.props.push(p);
        let p = self.enum_prop(&ep.keys())?;
        ep.props.push(p);
        Ok(())
    }

    fn numeric_variant(&mut self, around: &[String], variant: usize) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let (api, can, vv, min, max) = *self.pick(&SCALED);
        let mut s = NumericShape {
            min: Some(min),
            max: Some(max),
            integer: false,
            api: Some(api),
            api_in_description: false,
            can: Some(can),
            vv: Some(vv),
        };
        match variant % 6 {
            0 => {}
            1 => s.api_in_description = true,
            2 => s.can = None,
            3 => s.vv = None,
            4 => s.api = None,
            _ => {
                s.integer = true;
                s.can = Some(api);
                s.vv = Some(api);
            }
        }
        Ok(Prop::clean(k, Shape::Numeric(s)))
    }

    fn unmappable_numeric(&mut self, around: &[String], reason: SkipReason) -> Result<Prop, ForgeError> {
        let k = self.key(around)?;
        let mut s = NumericShape {
            min: Some(0.0),
            max: Some(100.0),
            integer: false,
            api: Some("km/h"),
            api_in_description: false,
            can: Some("km/h"),
            vv: Some("km/h"),
        };
        match reason {
            SkipReason::MissingUnit => {
                s.api = None;
                s.can = None;
                s.vv = None;
            }
            SkipReason::UnitMismatch => s.can = Some("W"),
            SkipReason::MissingRange => {
                s.min = None;
                s.max = None;
            }
            _ => unreachable!("numeric skip reasons only"),
        }
        let mut p = Prop::clean(k, Shape::Numeric(s));
        p.unmappable = Some(reason);
        Ok(p)
    }

    fn units(&mut self, ep: &mut Ep, i: usize) -> Result<(), ForgeError> {
        for j in 0..3 {
            let p = self.numeric_variant(&ep.keys(), i * 3 + j)?;
            ep.props.push(p);
        }
        if i % 3 == 1 {
            let reason = [SkipReason::MissingUnit, SkipReason::UnitMismatch, SkipReason::MissingRange][(i / 3) % 3];
            let p = self.unmappable_numeric(&ep.keys(), reason)?;
            ep.props.push(p);
        }
        Ok(())
    }

    fn dependencies(&mut self, ep: &mut Ep, i: usize) -> Result<(), ForgeError> {
        let p = self.datetime_prop(&ep.keys(), i % 2 == 1, i % 4 != 3)?;
        ep.props.push(p);
        let p = self.enum_prop(&ep.keys())?;
        ep.props.push(p);
        Ok(())
    }

    fn free_text(&mut self, ep: &mut Ep) -> Result<(), ForgeError> {
        let k = self.key(&ep.keys())?;
        ep.props.push(Prop { key: k, can_key: None, shape: Shape::FreeText, perturbation: None, unmappable: Some(SkipReason::UnsupportedDomain) });
        Ok(())
    }

    fn orphan(&mut self, ep: &mut Ep) -> Result<(), ForgeError> {
        let k = self.key(&ep.keys())?;
        let labels = self.labels();
        ep.props.push(Prop { key: k, can_key: None, shape: Shape::Enum(labels), perturbation: None, unmappable: Some(SkipReason::NoKeyMatch) });
        Ok(())
    }
}

fn endpoint_name(i: usize) -> String {
    let base = ENDPOINTS[i % ENDPOINTS.len()];
    match i / ENDPOINTS.len() {
        0 => base.to_string(),
        n => format!("{base}{}", n + 1),
    }
}

const FUZZY_CATEGORIES: [Category; 5] =
    [Category::Format, Category::Spelling, Category::Abbreviation, Category::Logical, Category::Semantic];

pub fn forge(opts: &ForgeOptions) -> Result<Corpus, ForgeError> {
    if opts.size == 0 {
        return Err(ForgeError::ZeroSize);
    }
    let mut f = Forge { rng: ChaCha8Rng::seed_from_u64(opts.seed), vocab: Vocab::new(), used: BTreeSet::new() };
    let mut eps: Vec<Ep> = Vec::new();
    for i in 0..opts.size {
        let name = endpoint_name(i);
        let mut ep = Ep {
            path: format!("/{name}"),
            hint: Some(title(&name)),
            method: if i % 2 == 0 { Method::Put } else { Method::Get },
            props: Vec::new(),
            distractors: Vec::new(),
            fault_ready: false,
        };
        match opts.profile {
            Profile::Clean => f.standard(&mut ep, true)?,
            Profile::Fuzzy5 => f.fuzzy(&mut ep, &FUZZY_CATEGORIES)?,
            Profile::Pseudocode => f.pseudocode(&mut ep)?,
            Profile::Units => f.units(&mut ep, i)?,
            Profile::Dependencies => f.dependencies(&mut ep, i)?,
            Profile::Mixed => {
                match i % 5 {
                    0 => f.standard(&mut ep, true)?,
                    1 => {
                        let a = FUZZY_CATEGORIES[(i / 5) % 5];
                        let b = FUZZY_CATEGORIES[(i / 5 + 2) % 5];
                        f.fuzzy(&mut ep, &[a, b])?;
                        let p = f.enum_prop(&ep.keys())?;
                        ep.props.push(p);
                    }
                    2 => f.pseudocode(&mut ep)?,
                    3 => f.units(&mut ep, i)?,
                    _ => f.dependencies(&mut ep, i)?,
                }
                if i % 3 == 2 {
                    f.free_text(&mut ep)?;
                }
                if i % 4 == 3 {
                    f.orphan(&mut ep)?;
                }
                if opts.size >= 5 && i == opts.size - 1 {
                    ep.hint = None;
                    ep.fault_ready = false;
                    for p in &mut ep.props {
                        if p.unmappable != Some(SkipReason::UnsupportedDomain) {
                            p.unmappable = Some(SkipReason::NoCandidates);
                        }
                    }
                }
            }
        }
        eps.push(ep);
    }
    let faults = place_faults(&mut f, &eps, opts.faults)?;
    Ok(assemble(opts, &eps, faults))
}

fn place_faults(f: &mut Forge, eps: &[Ep], n: usize) -> Result<Vec<(usize, FaultSpec)>, ForgeError> {
    let mut ready: Vec<usize> = (0..eps.len()).filter(|&i| eps[i].fault_ready).collect();
    if n > ready.len() {
        return Err(ForgeError::TooManyFaults { requested: n, eligible: ready.len() });
    }
    ready.shuffle(&mut f.rng);
    let mut chosen: Vec<usize> = ready[..n].to_vec();
    chosen.sort_unstable();
    let mut out = Vec::new();
    for (j, &i) in chosen.iter().enumerate() {
        let ep = &eps[i];
        let enum_prop = ep.props.iter().find(|p| matches!(p.shape, Shape::Enum(_)) && p.unmappable.is_none()).expect("fault-ready");
        let num_prop = ep
            .props
            .iter()
            .find(|p| matches!(&p.shape, Shape::Numeric(s) if s.api != s.can) && p.unmappable.is_none())
            .expect("fault-ready");
        let enum_can = enum_prop.can_key.clone().expect("mapped");
        let fault = match j % 5 {
            0 => FaultSpec::WrongScale { endpoint: ep.path.clone(), factor: 10.0 },
            1 => {
                let Shape::Enum(labels) = &enum_prop.shape else { unreachable!() };
                FaultSpec::SwappedEnum { endpoint: ep.path.clone(), label_a: labels[0].clone(), label_b: labels[1].clone() }
            }
            2 => FaultSpec::DeadSignal { can_key: enum_can },
            3 => FaultSpec::StaleState { vv_key: Prop::vv_key(&enum_can) },
            _ => FaultSpec::WrongUnit { can_key: num_prop.can_key.clone().expect("mapped") },
        };
        out.push((i, fault));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Emission: spec, tables, rig, manifest and expected cases from the model.

fn vv_raw(i: usize) -> i64 {
    2 * i as i64 + 1
}

struct Emit {
    spec: ApiSpec,
    can: CanTable,
    vv: VvTable,
    rig: RigConfig,
    truths: Vec<TrueMapping>,
    perturbations: Vec<Perturbation>,
    pseudo: Vec<PseudoTruth>,
    unmappable: Vec<Unmappable>,
    cases: Vec<TestCase>,
}

fn api_property(p: &Prop) -> ApiProperty {
    let mut out = ApiProperty { key: p.key.clone(), domain: ValueDomain::FreeText, unit_text: None, description: None, declared_type: DeclaredType::String };
    match &p.shape {
        Shape::Enum(labels) => out.domain = ValueDomain::Enumeration { labels: labels.clone() },
        Shape::Pseudo { set, .. } => {
            let s = &PSEUDO_SETS[*set];
            out.domain = ValueDomain::Enumeration { labels: vec![s.on.into(), s.off.into()] };
        }
        Shape::Boolean { .. } => {
            out.domain = ValueDomain::Boolean;
            out.declared_type = DeclaredType::Boolean;
        }
        Shape::Numeric(s) => {
            out.domain = ValueDomain::NumericRange { min: s.min, max: s.max };
            out.declared_type = if s.integer { DeclaredType::Integer } else { DeclaredType::Number };
            match (s.api, s.api_in_description) {
                (Some(u), true) => out.description = Some(format!("Requested value ({u})")),
                (Some(u), false) => out.unit_text = Some(u.to_string()),
                (None, _) => {}
            }
        }
        Shape::Datetime { .. } => out.domain = ValueDomain::Datetime,
        Shape::FreeText => out.description = Some("Free-form note".into()),
    }
    out
}

fn sig(key: &str, hint: &str, encoding: Encoding, unit: Option<&str>) -> CanSignal {
    CanSignal { key: key.into(), endpoint_hint: hint.into(), encoding, unit_text: unit.map(str::to_string), pseudocode: None }
}

fn bound(can_key: &str, encoding: Encoding, unit: Option<&str>) -> VvEntry {
    VvEntry { key: Prop::vv_key(can_key), encoding, bound_can_key: Some(can_key.into()), unit_text: unit.map(str::to_string) }
}

fn enum_encoding(labels: &[String], raw: impl Fn(usize) -> i64) -> Encoding {
    Encoding(labels.iter().enumerate().map(|(i, l)| (l.clone(), raw(i))).collect())
}

struct CaseSink<'a> {
    ep: &'a Ep,
    key: &'a str,
    n: usize,
    out: &'a mut Vec<TestCase>,
}

impl CaseSink<'_> {
    fn add(&mut self, api: ApiValue, raws: BTreeMap<String, f64>) {
        let id = format!("{}.{}.{}", self.ep.path.trim_matches('/').replace('/', "."), self.ep.method.as_str().to_lowercase(), self.key);
        let one = BTreeMap::from([(self.key.to_string(), api)]);
        let (payload, preset, vv, expected) = match self.ep.method {
            Method::Put => (one, BTreeMap::new(), raws, BTreeMap::new()),
            Method::Get => (BTreeMap::new(), raws, BTreeMap::new(), one),
        };
        self.out.push(TestCase {
            id: format!("{id}.{}", self.n),
            method: self.ep.method,
            endpoint: self.ep.path.clone(),
            api_payload: payload,
            vv_preset: preset,
            expected_vv: vv,
            expected_api: expected,
            provenance: vec![id],
        });
        self.n += 1;
    }
}

fn samples(min: f64, max: f64, integer: bool) -> Vec<f64> {
    let mut mid = (min + max) / 2.0;
    if integer {
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

fn emit_prop(e: &mut Emit, ep: &Ep, hint: &str, p: &Prop, rig_props: &mut Vec<PropertyConfig>) {
    let mapped = p.unmappable.is_none();
    let mut sink = CaseSink { ep, key: &p.key, n: 0, out: &mut e.cases };
    let mut truth = TrueMapping { endpoint: ep.path.clone(), method: ep.method, key: p.key.clone(), links: Vec::new(), values: Vec::new() };
    let whole = |can: &str| TrueLink { role: Role::Whole, api_key: p.key.clone(), can_key: can.into(), vv_key: Prop::vv_key(can) };
    match &p.shape {
        Shape::Enum(labels) => {
            let Some(can) = &p.can_key else { return };
            e.can.signals.push(sig(can, hint, enum_encoding(labels, |i| i as i64), None));
            e.vv.entries.push(bound(can, enum_encoding(labels, vv_raw), None));
            if !mapped {
                return;
            }
            truth.links.push(whole(can));
            for (i, l) in labels.iter().enumerate() {
                truth.values.push(TrueValue { api: l.clone(), can: l.clone(), vv: l.clone() });
                sink.add(ApiValue::Text(l.clone()), BTreeMap::from([(Prop::vv_key(can), vv_raw(i) as f64)]));
            }
            rig_props.push(PropertyConfig {
                key: p.key.clone(),
                codec: Codec::Enum {
                    can_key: can.clone(),
                    write: labels.iter().enumerate().map(|(i, l)| (l.clone(), i as i64)).collect(),
                    read: labels.iter().enumerate().map(|(i, l)| (i as i64, l.clone())).collect(),
                    boolean: false,
                },
            });
            e.rig.vv_bindings.push(VvBinding {
                can_key: can.clone(),
                vv_key: Prop::vv_key(can),
                enum_map: Some((0..labels.len()).map(|i| (i as i64, vv_raw(i) as f64)).collect()),
                scale: 1.0,
                default_raw: vv_raw(0) as f64,
            });
        }
        Shape::Boolean { on, off } => {
            let can = p.can_key.as_ref().expect("booleans have a signal");
            let enc = Encoding(vec![(off.clone(), 0), (on.clone(), 1)]);
            e.can.signals.push(sig(can, hint, enc.clone(), None));
            e.vv.entries.push(bound(can, enc, None));
            if !mapped {
                return;
            }
            truth.links.push(whole(can));
            truth.values.push(TrueValue { api: "TRUE".into(), can: on.clone(), vv: on.clone() });
            truth.values.push(TrueValue { api: "FALSE".into(), can: off.clone(), vv: off.clone() });
            sink.add(ApiValue::Bool(true), BTreeMap::from([(Prop::vv_key(can), 1.0)]));
            sink.add(ApiValue::Bool(false), BTreeMap::from([(Prop::vv_key(can), 0.0)]));
            rig_props.push(PropertyConfig {
                key: p.key.clone(),
                codec: Codec::Enum {
                    can_key: can.clone(),
                    write: BTreeMap::from([("TRUE".to_string(), 1), ("FALSE".to_string(), 0)]),
                    read: vec![(0, "FALSE".into()), (1, "TRUE".into())],
                    boolean: true,
                },
            });
            e.rig.vv_bindings.push(VvBinding {
                can_key: can.clone(),
                vv_key: Prop::vv_key(can),
                enum_map: Some(vec![(0, 0.0), (1, 1.0)]),
                scale: 1.0,
                default_raw: 0.0,
            });
        }
        Shape::Pseudo { set, order, .. } => {
            let s = &PSEUDO_SETS[*set];
            let can = p.can_key.as_ref().expect("pseudocode signals exist");
            let off_can = title(s.off);
            let mut labels = vec![off_can.clone()];
            labels.extend(order.iter().map(|(l, _)| l.clone()));
            let raw_of = |label: &str| labels.iter().position(|l| l == label).expect("own label") as i64;
            let mut signal = sig(can, hint, enum_encoding(&labels, |i| i as i64), None);
            signal.pseudocode = Some(order.iter().map(|(l, _)| format!("{can}:{l}")).collect::<Vec<_>>().join(" OR "));
            e.can.signals.push(signal);
            e.vv.entries.push(bound(can, enum_encoding(&labels, vv_raw), None));
            if !mapped {
                return;
            }
            truth.links.push(whole(can));
            let vv_of = |label: &str| vv_raw(raw_of(label) as usize) as f64;
            let vv_key = Prop::vv_key(can);
            match ep.method {
                Method::Put => {
                    sink.add(ApiValue::Text(s.on.into()), BTreeMap::from([(vv_key.clone(), vv_of(s.primary))]));
                    sink.add(ApiValue::Text(s.off.into()), BTreeMap::from([(vv_key.clone(), vv_of(&off_can))]));
                }
                Method::Get => {
                    for (l, kind) in order {
                        if kind.valid() {
                            sink.add(ApiValue::Text(s.on.into()), BTreeMap::from([(vv_key.clone(), vv_of(l))]));
                        }
                    }
                    sink.add(ApiValue::Text(s.off.into()), BTreeMap::from([(vv_key.clone(), vv_of(&off_can))]));
                }
            }
            for (l, kind) in order {
                if kind.valid() {
                    truth.values.push(TrueValue { api: s.on.into(), can: l.clone(), vv: l.clone() });
                }
            }
            truth.values.push(TrueValue { api: s.off.into(), can: off_can.clone(), vv: off_can.clone() });
            e.pseudo.push(PseudoTruth {
                endpoint: ep.path.clone(),
                method: ep.method,
                key: p.key.clone(),
                label: s.on.into(),
                can_key: can.clone(),
                alternatives: order.iter().map(|(l, k)| AltTruth { label: l.clone(), kind: *k }).collect(),
            });
            let mut read = vec![(0, s.off.to_string())];
            for (l, kind) in order {
                read.push((raw_of(l), if kind.valid() { s.on } else { s.off }.to_string()));
            }
            rig_props.push(PropertyConfig {
                key: p.key.clone(),
                codec: Codec::Enum {
                    can_key: can.clone(),
                    write: BTreeMap::from([(s.on.to_string(), raw_of(s.primary)), (s.off.to_string(), 0)]),
                    read,
                    boolean: false,
                },
            });
            e.rig.vv_bindings.push(VvBinding {
                can_key: can.clone(),
                vv_key,
                enum_map: Some((0..labels.len()).map(|i| (i as i64, vv_raw(i) as f64)).collect()),
                scale: 1.0,
                default_raw: vv_raw(0) as f64,
            });
        }
        Shape::Numeric(s) => {
            let Some(can) = &p.can_key else { return };
            e.can.signals.push(sig(can, hint, Encoding::default(), s.can));
            e.vv.entries.push(bound(can, Encoding::default(), s.vv));
            if !mapped {
                return;
            }
            let (api_u, can_u, vv_u) = s.effective().expect("mapped numerics have a unit");
            truth.links.push(whole(can));
            let to_vv = unit_factor(api_u) / unit_factor(vv_u);
            let (min, max) = (s.min.expect("range"), s.max.expect("range"));
            for v in samples(min, max, s.integer) {
                let api = if s.integer { ApiValue::Int(v as i64) } else { ApiValue::Number(v) };
                sink.add(api, BTreeMap::from([(Prop::vv_key(can), v * to_vv)]));
            }
            rig_props.push(PropertyConfig {
                key: p.key.clone(),
                codec: Codec::Numeric { can_key: can.clone(), scale: unit_factor(api_u) / unit_factor(can_u), integer: s.integer },
            });
            e.rig.vv_bindings.push(VvBinding {
                can_key: can.clone(),
                vv_key: Prop::vv_key(can),
                enum_map: None,
                scale: unit_factor(can_u) / unit_factor(vv_u),
                default_raw: 0.0,
            });
        }
        Shape::Datetime { hours, minutes } => {
            e.can.signals.push(sig(hours, hint, Encoding::default(), None));
            e.vv.entries.push(bound(hours, Encoding::default(), None));
            let Some(minutes) = minutes else { return };
            e.can.signals.push(sig(minutes, hint, Encoding::default(), None));
            e.vv.entries.push(bound(minutes, Encoding::default(), None));
            if !mapped {
                return;
            }
            for (role, can, suffix) in [(Role::Hours, hours, "Hours"), (Role::Minutes, minutes, "Minutes")] {
                truth.links.push(TrueLink { role, api_key: format!("{}{suffix}", p.key), can_key: can.clone(), vv_key: Prop::vv_key(can) });
                e.rig.vv_bindings.push(VvBinding { can_key: can.clone(), vv_key: Prop::vv_key(can), enum_map: None, scale: 1.0, default_raw: 0.0 });
            }
            for (h, m) in [(0u32, 0u32), (11, 59), (23, 59)] {
                let text = format!("1970-01-01T{h:02}:{m:02}:00Z");
                sink.add(
                    ApiValue::Text(text),
                    BTreeMap::from([(Prop::vv_key(hours), h as f64), (Prop::vv_key(minutes), m as f64)]),
                );
            }
            rig_props.push(PropertyConfig { key: p.key.clone(), codec: Codec::Datetime { hours_key: hours.clone(), minutes_key: minutes.clone() } });
        }
        Shape::FreeText => {}
    }
    if let (Some((category, in_lexicon)), Some(can)) = (p.perturbation, &p.can_key) {
        e.perturbations.push(Perturbation {
            endpoint: ep.path.clone(),
            method: ep.method,
            api_key: p.key.clone(),
            can_key: can.clone(),
            category,
            in_lexicon,
        });
    }
    if mapped {
        e.truths.push(truth);
    }
}

fn assemble(opts: &ForgeOptions, eps: &[Ep], faults: Vec<(usize, FaultSpec)>) -> Corpus {
    let mut e = Emit {
        spec: ApiSpec { endpoints: Vec::new(), source_path: SPEC_FILE.into() },
        can: CanTable::default(),
        vv: VvTable::default(),
        rig: RigConfig::default(),
        truths: Vec::new(),
        perturbations: Vec::new(),
        pseudo: Vec::new(),
        unmappable: Vec::new(),
        cases: Vec::new(),
    };
    for ep in eps {
        e.spec.endpoints.push(Endpoint { path: ep.path.clone(), methods: vec![ep.method], properties: ep.props.iter().map(api_property).collect() });
        let hint = ep.hint.clone().unwrap_or_else(|| "Unassigned".into());
        let mut rig_props = Vec::new();
        for p in &ep.props {
            if let Some(reason) = p.unmappable {
                e.unmappable.push(Unmappable { endpoint: ep.path.clone(), method: ep.method, key: p.key.clone(), reason });
            }
            emit_prop(&mut e, ep, &hint, p, &mut rig_props);
        }
        for (k, labels) in &ep.distractors {
            e.can.signals.push(sig(k, &hint, enum_encoding(labels, |i| i as i64), None));
        }
        if !rig_props.is_empty() {
            e.rig.endpoints.push(EndpointConfig { path: ep.path.clone(), methods: vec![ep.method], properties: rig_props });
        }
    }
    e.rig.faults = faults.iter().map(|(_, f)| f.clone()).collect();
    let manifest = Manifest {
        options: *opts,
        apis: eps.iter().map(Ep::api).collect(),
        true_mappings: e.truths,
        perturbations: e.perturbations,
        pseudocode: e.pseudo,
        unmappable: e.unmappable,
        faults: e.rig.faults.clone(),
        faulted_apis: faults.iter().map(|(i, _)| eps[*i].api()).collect(),
        ground_truth_cases: e.cases,
    };
    Corpus { spec: e.spec, can: e.can, vv: e.vv, rig: e.rig, manifest }
}

// ---------------------------------------------------------------------------
// Scoring match results against a manifest.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeScore {
    pub overall: Prf,
    pub per_category: BTreeMap<Category, Prf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_coverage: Option<f64>,
}

type KeyPair = (String, Method, String, String);

fn check_apis(outcome: &MatchOutcome, manifest: &Manifest) -> Result<(), ManifestMismatch> {
    let known: BTreeSet<ApiRef> = manifest.apis.iter().cloned().collect();
    for r in &outcome.results {
        let api = ApiRef { endpoint: r.endpoint.clone(), method: r.method };
        if !known.contains(&api) {
            return Err(ManifestMismatch::UnknownApi(api.to_string()));
        }
    }
    Ok(())
}

/// Key-level precision/recall of the API → CAN pairs in `outcome`, overall
/// and per perturbation category (unperturbed pairs count as exact).
pub fn score_against_manifest(outcome: &MatchOutcome, manifest: &Manifest) -> Result<ForgeScore, ManifestMismatch> {
    check_apis(outcome, manifest)?;
    let mut category_of: BTreeMap<(String, Method, String), Category> = BTreeMap::new();
    let mut truth: BTreeSet<KeyPair> = BTreeSet::new();
    for m in &manifest.true_mappings {
        for l in &m.links {
            truth.insert((m.endpoint.clone(), m.method, l.api_key.clone(), l.can_key.clone()));
            category_of.insert((m.endpoint.clone(), m.method, l.api_key.clone()), Category::Exact);
        }
    }
    for p in &manifest.perturbations {
        category_of.insert((p.endpoint.clone(), p.method, p.api_key.clone()), p.category);
    }
    if truth.is_empty() {
        return Err(ManifestMismatch::NoGroundTruth);
    }
    let predicted: BTreeSet<KeyPair> = outcome
        .results
        .iter()
        .flat_map(|r| r.links.iter().map(move |l| (r.endpoint.clone(), r.method, l.key_chain.0.left_key.clone(), l.can.key.clone())))
        .collect();
    let score = |pred: &BTreeSet<&KeyPair>, gt: &BTreeSet<&KeyPair>| Prf::from_counts(pred.intersection(gt).count(), pred.len(), gt.len());
    let overall = score(&predicted.iter().collect(), &truth.iter().collect());
    let mut per_category = BTreeMap::new();
    for c in Category::ALL {
        let in_c = |k: &&KeyPair| category_of.get(&(k.0.clone(), k.1, k.2.clone())) == Some(&c);
        let gt: BTreeSet<&KeyPair> = truth.iter().filter(in_c).collect();
        if gt.is_empty() {
            continue;
        }
        let pred: BTreeSet<&KeyPair> = predicted.iter().filter(in_c).collect();
        per_category.insert(c, score(&pred, &gt));
    }
    Ok(ForgeScore { overall, per_category, lexicon_coverage: manifest.lexicon_coverage() })
}

/// Precision/recall of the pseudocode alternatives paired with each
/// property's on-label against the valid alternatives in the manifest.
pub fn score_pseudocode(outcome: &MatchOutcome, manifest: &Manifest) -> Result<Prf, ManifestMismatch> {
    check_apis(outcome, manifest)?;
    if manifest.pseudocode.is_empty() {
        return Err(ManifestMismatch::NoGroundTruth);
    }
    let mut truth: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut predicted: BTreeSet<(String, String, String)> = BTreeSet::new();
    for t in &manifest.pseudocode {
        for a in t.alternatives.iter().filter(|a| a.kind.valid()) {
            truth.insert((t.endpoint.clone(), t.key.clone(), a.label.clone()));
        }
        let alts: BTreeSet<&str> = t.alternatives.iter().map(|a| a.label.as_str()).collect();
        let result = outcome.results.iter().find(|r| r.endpoint == t.endpoint && r.method == t.method && r.property.key == t.key);
        let Some(link) = result.and_then(|r| r.link(Role::Whole)) else { continue };
        let Some((api_can, _)) = &link.value_chain else { continue };
        for pair in api_can.pairs.iter().filter(|p| p.left == t.label && alts.contains(p.right.as_str())) {
            predicted.insert((t.endpoint.clone(), t.key.clone(), pair.right.clone()));
        }
    }
    Ok(Prf::from_counts(predicted.intersection(&truth).count(), predicted.len(), truth.len()))
}
