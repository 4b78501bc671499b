//! The two mapping stages, S → S′ (API → CAN) and S′ → S* (CAN → VV).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{match_keys, match_labels, match_pseudocode, BackendError, Category, LabelPair, MatchCandidate, MatcherBackend, Strictness, ValueMapping};
use crate::ingest::{ApiProperty, Method, TestObjectSet, ValueDomain};
use crate::tables::{lookup_candidates, parse_pseudocode, Alternative, CanSignal, CanTable, VvEntry, VvTable};
use crate::units::{reconcile, Reconciled, Unit, UnitRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Whole,
    Hours,
    Minutes,
}

impl Role {
    fn suffix(self) -> &'static str {
        match self {
            Role::Whole => "",
            Role::Hours => "Hours",
            Role::Minutes => "Minutes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ApiToCan,
    CanToVv,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoCandidates,
    NoKeyMatch,
    MissingRole,
    UnsupportedDomain,
    NoValueMatch,
    PseudocodeGrammar,
    NoVvMatch,
    MissingUnit,
    UnitMismatch,
    MissingRange,
    Backend,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoCandidates => "no_candidates",
            SkipReason::NoKeyMatch => "no_key_match",
            SkipReason::MissingRole => "missing_role",
            SkipReason::UnsupportedDomain => "unsupported_domain",
            SkipReason::NoValueMatch => "no_value_match",
            SkipReason::PseudocodeGrammar => "pseudocode_grammar",
            SkipReason::NoVvMatch => "no_vv_match",
            SkipReason::MissingUnit => "missing_unit",
            SkipReason::UnitMismatch => "unit_mismatch",
            SkipReason::MissingRange => "missing_range",
            SkipReason::Backend => "backend",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An attribute that will not be tested, with the stage that dropped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub endpoint: String,
    pub method: Method,
    pub key: String,
    pub stage: Stage,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanLink {
    pub role: Role,
    pub can: CanSignal,
    pub key_match: MatchCandidate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ValueMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_unit: Option<Unit>,
}

/// A property after API → CAN mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialMatch {
    pub endpoint: String,
    pub method: Method,
    pub property: ApiProperty,
    pub links: Vec<CanLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub role: Role,
    pub can: CanSignal,
    pub vv: VvEntry,
    pub key_chain: (MatchCandidate, MatchCandidate),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_chain: Option<(ValueMapping, ValueMapping)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<crate::units::ConversionPlan>,
}

impl ChainLink {
    /// VV label for an API label through both value maps (primary pair first).
    pub fn vv_labels_for(&self, api_label: &str) -> Vec<(String, String)> {
        let Some((api_can, can_vv)) = &self.value_chain else {
            return Vec::new();
        };
        api_can
            .rights_for(api_label)
            .into_iter()
            .filter_map(|can| can_vv.rights_for(can).first().map(|vv| (can.to_string(), vv.to_string())))
            .collect()
    }
}

/// A completed API → CAN → VV chain for one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub id: String,
    pub endpoint: String,
    pub method: Method,
    pub property: ApiProperty,
    pub links: Vec<ChainLink>,
    pub rationale: String,
}

impl MatchResult {
    pub fn link(&self, role: Role) -> Option<&ChainLink> {
        self.links.iter().find(|l| l.role == role)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub results: Vec<MatchResult>,
    pub skipped: Vec<Skipped>,
}

/// Everything a mapping stage needs besides its inputs.
#[derive(Clone, Copy)]
pub struct Matcher<'a> {
    pub backend: &'a dyn MatcherBackend,
    pub strictness: Strictness,
    pub units: &'a UnitRegistry,
}

pub fn endpoint_slug(endpoint: &str) -> String {
    endpoint.trim_matches('/').replace('/', ".")
}

fn result_id(endpoint: &str, method: Method, key: &str) -> String {
    format!("{}.{}.{}", endpoint_slug(endpoint), method.as_str().to_lowercase(), key)
}

fn skip(endpoint: &str, method: Method, key: &str, stage: Stage, reason: SkipReason, detail: impl Into<String>) -> Skipped {
    Skipped { endpoint: endpoint.to_string(), method, key: key.to_string(), stage, reason, detail: detail.into() }
}

fn roles_of(p: &ApiProperty) -> Vec<Role> {
    match p.domain {
        ValueDomain::Datetime => vec![Role::Hours, Role::Minutes],
        _ => vec![Role::Whole],
    }
}

fn role_key(p: &ApiProperty, role: Role) -> String {
    format!("{}{}", p.key, role.suffix())
}

fn parse_unit_opt(units: &UnitRegistry, text: Option<&str>) -> Option<Unit> {
    text.filter(|t| !t.trim().is_empty()).and_then(|t| units.parse_unit(t).ok())
}

/// API labels → CAN labels for one signal, pseudocode alternatives first.
fn api_value_mapping(p: &ApiProperty, signal: &CanSignal, m: &Matcher) -> Result<ValueMapping, (SkipReason, String)> {
    let left = p.domain.labels().unwrap_or_default();
    let right: Vec<String> = signal.encoding.labels().map(str::to_string).collect();
    if right.is_empty() {
        return Err((SkipReason::NoValueMatch, format!("{} has no value encoding", signal.key)));
    }
    let backend_err = |e: BackendError| (SkipReason::Backend, e.to_string());
    let mut pairs: Vec<LabelPair> = Vec::new();
    let mut claimed: Vec<String> = Vec::new();
    let mut remaining = left.clone();
    if let Some(code) = signal.pseudocode.as_deref().filter(|c| !c.trim().is_empty()) {
        let alts = parse_pseudocode(code).map_err(|e| (SkipReason::PseudocodeGrammar, e.to_string()))?;
        let usable: Vec<Alternative> = alts
            .alternatives
            .into_iter()
            .filter(|a| a.key == signal.key && signal.encoding.raw(&a.label).is_some())
            .collect();
        if !usable.is_empty() {
            for label in &left {
                let query = Alternative { key: p.key.clone(), label: label.clone() };
                let open: Vec<Alternative> = usable.iter().filter(|a| !claimed.contains(&a.label)).cloned().collect();
                let found = match_pseudocode(&query, &open, m.strictness, m.backend).map_err(backend_err)?;
                for sa in found {
                    claimed.push(sa.alternative.label.clone());
                    pairs.push(LabelPair {
                        left: label.clone(),
                        right: sa.alternative.label,
                        category: sa.category,
                        score: sa.score,
                    });
                }
            }
            remaining.retain(|l| !pairs.iter().any(|p| &p.left == l));
        }
    }
    let open_right: Vec<String> = right.iter().filter(|r| !claimed.contains(r)).cloned().collect();
    let rest = match_labels(&remaining, &open_right, m.strictness, m.backend).map_err(backend_err)?;
    pairs.extend(rest.pairs);
    pairs.sort_by_key(|p| left.iter().position(|l| *l == p.left));
    if pairs.is_empty() {
        return Err((SkipReason::NoValueMatch, format!("no label of {} pairs with {}", p.key, signal.key)));
    }
    Ok(ValueMapping::from_pairs(pairs, &left, &right))
}

/// S → S′ for one endpoint/method.
pub fn map_api_to_can(set: &TestObjectSet, table: &CanTable, m: &Matcher) -> (Vec<PartialMatch>, Vec<Skipped>) {
    let (ep, method) = (set.endpoint.as_str(), set.method);
    let mut skipped = Vec::new();
    let candidates = lookup_candidates(ep, table);
    let mut testable: Vec<&ApiProperty> = Vec::new();
    for p in &set.properties {
        if p.domain == ValueDomain::FreeText {
            skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::UnsupportedDomain, "free text has no signal encoding"));
        } else if candidates.is_empty() {
            skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::NoCandidates, format!("no CAN signal hinted for {ep}")));
        } else {
            testable.push(p);
        }
    }
    if testable.is_empty() {
        return (Vec::new(), skipped);
    }

    let left: Vec<String> = testable.iter().flat_map(|p| roles_of(p).into_iter().map(move |r| role_key(p, r))).collect();
    let right: Vec<String> = candidates.iter().map(|s| s.key.clone()).collect();
    let found = match match_keys(&left, &right, m.strictness, m.backend) {
        Ok(f) => f,
        Err(e) => {
            for p in testable {
                skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::Backend, e.to_string()));
            }
            return (Vec::new(), skipped);
        }
    };
    let by_left: BTreeMap<&str, &MatchCandidate> = found.iter().map(|c| (c.left_key.as_str(), c)).collect();

    let mut partials = Vec::new();
    'props: for p in testable {
        let roles = roles_of(p);
        let hits: Vec<(Role, &MatchCandidate)> =
            roles.iter().filter_map(|r| by_left.get(role_key(p, *r).as_str()).map(|c| (*r, *c))).collect();
        if hits.is_empty() {
            skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::NoKeyMatch, format!("no CAN key clears {}", m.strictness)));
            continue;
        }
        if hits.len() < roles.len() {
            let missing: Vec<&str> = roles.iter().filter(|r| !hits.iter().any(|(h, _)| h == *r)).map(|r| r.suffix()).collect();
            skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::MissingRole, format!("unmatched role {}", missing.join(","))));
            continue;
        }
        let mut links = Vec::new();
        for (role, cand) in hits {
            let signal = table.get(&cand.right_key).expect("candidate came from the table").clone();
            let mut link = CanLink { role, can: signal, key_match: cand.clone(), values: None, api_unit: None };
            match &p.domain {
                ValueDomain::Enumeration { .. } | ValueDomain::Boolean => match api_value_mapping(p, &link.can, m) {
                    Ok(vm) => link.values = Some(vm),
                    Err((reason, detail)) => {
                        skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, reason, detail));
                        continue 'props;
                    }
                },
                ValueDomain::NumericRange { .. } => {
                    link.api_unit = parse_unit_opt(m.units, p.unit_text.as_deref());
                    if link.api_unit.is_none() {
                        match m.backend.infer_unit(&p.key, p.description.as_deref()) {
                            Ok(name) => link.api_unit = parse_unit_opt(m.units, name.as_deref()),
                            Err(e) => {
                                skipped.push(skip(ep, method, &p.key, Stage::ApiToCan, SkipReason::Backend, e.to_string()));
                                continue 'props;
                            }
                        }
                    }
                }
                ValueDomain::Datetime | ValueDomain::FreeText => {}
            }
            links.push(link);
        }
        partials.push(PartialMatch { endpoint: ep.to_string(), method, property: p.clone(), links });
    }
    (partials, skipped)
}

fn describe_pairs(vm: &ValueMapping) -> String {
    vm.pairs.iter().map(|p| format!("{}→{}", p.left, p.right)).collect::<Vec<_>>().join(", ")
}

/// S′ → S*. Explicit VV bindings win; the rest are fuzzy-matched against unbound entries.
pub fn map_can_to_vv(partials: &[PartialMatch], table: &VvTable, m: &Matcher) -> (Vec<MatchResult>, Vec<Skipped>) {
    let mut skipped = Vec::new();
    let mut pool: Vec<String> = Vec::new();
    for link in partials.iter().flat_map(|p| &p.links) {
        if table.bound_to(&link.can.key).is_none() && !pool.contains(&link.can.key) {
            pool.push(link.can.key.clone());
        }
    }
    let unbound: Vec<String> = table.entries.iter().filter(|e| e.bound_can_key.is_none()).map(|e| e.key.clone()).collect();
    let fuzzy: Result<BTreeMap<String, MatchCandidate>, BackendError> = if pool.is_empty() {
        Ok(BTreeMap::new())
    } else {
        match_keys(&pool, &unbound, m.strictness, m.backend).map(|v| v.into_iter().map(|c| (c.left_key.clone(), c)).collect())
    };

    let mut results = Vec::new();
    'props: for pm in partials {
        let (ep, method, key) = (pm.endpoint.as_str(), pm.method, pm.property.key.as_str());
        let fail = |reason: SkipReason, detail: String| skip(ep, method, key, Stage::CanToVv, reason, detail);
        let fuzzy = match &fuzzy {
            Ok(f) => f,
            Err(e) => {
                skipped.push(fail(SkipReason::Backend, e.to_string()));
                continue;
            }
        };
        let mut links = Vec::new();
        let mut notes = Vec::new();
        for link in &pm.links {
            let (vv, second, how) = match table.bound_to(&link.can.key) {
                Some(e) => {
                    let c = MatchCandidate { left_key: link.can.key.clone(), right_key: e.key.clone(), category: Category::Exact, score: 1.0 };
                    (e.clone(), c, "explicit binding".to_string())
                }
                None => match fuzzy.get(&link.can.key) {
                    Some(c) => {
                        let e = table.get(&c.right_key).expect("candidate came from the table").clone();
                        (e, c.clone(), format!("{} {:.2}", c.category, c.score))
                    }
                    None => {
                        skipped.push(fail(SkipReason::NoVvMatch, format!("no VV entry for {}", link.can.key)));
                        continue 'props;
                    }
                },
            };
            let mut value_chain = None;
            if let Some(api_can) = &link.values {
                let can_used: Vec<String> = {
                    let mut v: Vec<String> = Vec::new();
                    for p in &api_can.pairs {
                        if !v.contains(&p.right) {
                            v.push(p.right.clone());
                        }
                    }
                    v
                };
                let vv_labels: Vec<String> = vv.encoding.labels().map(str::to_string).collect();
                let can_vv = match match_labels(&can_used, &vv_labels, m.strictness, m.backend) {
                    Ok(vm) => vm,
                    Err(e) => {
                        skipped.push(fail(SkipReason::Backend, e.to_string()));
                        continue 'props;
                    }
                };
                let kept: Vec<LabelPair> =
                    api_can.pairs.iter().filter(|p| !can_vv.rights_for(&p.right).is_empty()).cloned().collect();
                if kept.is_empty() {
                    skipped.push(fail(SkipReason::NoValueMatch, format!("no label of {} pairs with VV {}", link.can.key, vv.key)));
                    continue 'props;
                }
                let api_labels = pm.property.domain.labels().unwrap_or_default();
                let can_labels: Vec<String> = link.can.encoding.labels().map(str::to_string).collect();
                let api_can = ValueMapping::from_pairs(kept, &api_labels, &can_labels);
                notes.push(format!("values {} | {}", describe_pairs(&api_can), describe_pairs(&can_vv)));
                value_chain = Some((api_can, can_vv));
            }
            let mut conversion = None;
            if matches!(pm.property.domain, ValueDomain::NumericRange { .. }) {
                let can_u = parse_unit_opt(m.units, link.can.unit_text.as_deref());
                let vv_u = parse_unit_opt(m.units, vv.unit_text.as_deref());
                match reconcile(link.api_unit.as_ref(), can_u.as_ref(), vv_u.as_ref()) {
                    Ok(Reconciled::Plan(plan)) => {
                        notes.push(format!("units {} → {} → {}", plan.api_unit, plan.can_unit, plan.vv_unit));
                        conversion = Some(plan);
                    }
                    Ok(Reconciled::InsufficientContext) => {
                        skipped.push(fail(SkipReason::MissingUnit, "no unit on any side of the chain".into()));
                        continue 'props;
                    }
                    Err(e) => {
                        skipped.push(fail(SkipReason::UnitMismatch, e.to_string()));
                        continue 'props;
                    }
                }
            }
            notes.insert(
                links.len().min(notes.len()),
                format!(
                    "{} → {} ({} {:.2}) → {} ({how})",
                    link.key_match.left_key, link.can.key, link.key_match.category, link.key_match.score, vv.key
                ),
            );
            links.push(ChainLink {
                role: link.role,
                can: link.can.clone(),
                vv,
                key_chain: (link.key_match.clone(), second),
                value_chain,
                conversion,
            });
        }
        results.push(MatchResult {
            id: result_id(ep, method, key),
            endpoint: ep.to_string(),
            method,
            property: pm.property.clone(),
            links,
            rationale: notes.join("; "),
        });
    }
    (results, skipped)
}

/// Both stages for every set. Sets are independent and run on up to
/// `parallelism` threads; output order follows input order.
pub fn map_all(sets: &[TestObjectSet], can: &CanTable, vv: &VvTable, m: &Matcher, parallelism: usize) -> MatchOutcome {
    let one = |set: &TestObjectSet| -> MatchOutcome {
        let (partials, mut skipped) = map_api_to_can(set, can, m);
        let (results, more) = map_can_to_vv(&partials, vv, m);
        skipped.extend(more);
        MatchOutcome { results, skipped }
    };
    let workers = parallelism.max(1).min(sets.len().max(1));
    let outcomes: Vec<MatchOutcome> = if workers == 1 {
        sets.iter().map(one).collect()
    } else {
        let mut slots: Vec<Option<MatchOutcome>> = vec![None; sets.len()];
        let chunk = sets.len().div_ceil(workers);
        std::thread::scope(|s| {
            for (set_chunk, slot_chunk) in sets.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                s.spawn(move || {
                    for (set, slot) in set_chunk.iter().zip(slot_chunk.iter_mut()) {
                        *slot = Some(one(set));
                    }
                });
            }
        });
        slots.into_iter().map(|o| o.expect("every set mapped")).collect()
    };
    let mut all = MatchOutcome::default();
    for o in outcomes {
        all.results.extend(o.results);
        all.skipped.extend(o.skipped);
    }
    all
}
