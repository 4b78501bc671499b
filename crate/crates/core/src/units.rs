//! Unit registry, conversion and API→CAN→VV unit reconciliation.
//!
//! Scale factors are exact rationals relative to the dimension's base unit
//! (m/s, W, s). Affine units are out of scope, so the offset is always zero.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const BUNDLED_UNITS: &str = include_str!("../data/units.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("dimension mismatch: {from} ({from_dim}) vs {to} ({to_dim})")]
    DimensionMismatch { from: String, from_dim: String, to: String, to_dim: String },
    #[error("units registry line {line}: {message}")]
    Registry { line: usize, message: String },
}

pub type Factor = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Unit {
    pub canonical_name: String,
    pub dimension: String,
    pub scale_to_base: Factor,
    pub offset_to_base: Factor,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name)
    }
}

// Units travel through artifacts by canonical name; the bundled registry
// resolves them again on the way back in.
impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical_name)
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        UnitRegistry::bundled().parse_unit(&name).map_err(serde::de::Error::custom)
    }
}

fn parse_factor(text: &str) -> Option<Factor> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        return (d != 0).then(|| Ratio::new(n, d));
    }
    if let Some((int, frac)) = text.split_once('.') {
        let denom = 10i64.checked_pow(frac.len() as u32)?;
        let digits: i64 = format!("{int}{frac}").parse().ok()?;
        return Some(Ratio::new(digits, denom));
    }
    text.parse::<i64>().ok().map(Ratio::from_integer)
}

fn factor_to_f64(f: Factor) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

fn scale(magnitude: f64, f: Factor) -> f64 {
    magnitude * *f.numer() as f64 / *f.denom() as f64
}

#[derive(Debug, Clone)]
pub struct UnitRegistry {
    aliases: HashMap<String, Unit>,
    // (alias, canonical) pairs in file order, for description scanning.
    order: Vec<(String, String)>,
}

impl UnitRegistry {
    pub fn bundled() -> UnitRegistry {
        UnitRegistry::from_tsv(BUNDLED_UNITS).expect("bundled units.tsv is well formed")
    }

    pub fn from_tsv(text: &str) -> Result<UnitRegistry, UnitError> {
        let mut aliases: HashMap<String, Unit> = HashMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| UnitError::Registry { line: i + 1, message: message.to_string() };
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(err("expected alias, canonical, dimension, scale"));
            }
            let scale = parse_factor(cols[3]).ok_or_else(|| err("bad scale"))?;
            if scale <= Ratio::from_integer(0) {
                return Err(err("scale must be positive"));
            }
            let unit = Unit {
                canonical_name: cols[1].to_string(),
                dimension: cols[2].to_string(),
                scale_to_base: scale,
                offset_to_base: Ratio::from_integer(0),
            };
            if let Some(existing) = aliases.values().find(|u| u.canonical_name == unit.canonical_name) {
                if *existing != unit {
                    return Err(err("canonical name redefined with a different dimension or scale"));
                }
            }
            let key = cols[0].to_lowercase();
            if let Some(prev) = aliases.get(&key) {
                if *prev != unit {
                    return Err(err("alias maps to two units"));
                }
            }
            aliases.insert(key.clone(), unit);
            order.push((key, cols[1].to_string()));
        }
        Ok(UnitRegistry { aliases, order })
    }

    /// Resolve a surface form (case-insensitive) to its canonical unit.
    pub fn parse_unit(&self, text: &str) -> Result<Unit, UnitError> {
        let key = text.trim().to_lowercase();
        self.aliases.get(&key).cloned().ok_or_else(|| UnitError::UnknownUnit(text.to_string()))
    }

    /// Find a unit mentioned in free text, preferring the longest alias.
    ///
    /// One-letter aliases only count when written in parentheses, e.g. `(W)`.
    pub fn scan_text(&self, text: &str) -> Option<Unit> {
        let lower = text.to_lowercase();
        let mut best: Option<&str> = None;
        for (alias, _) in &self.order {
            let hit = if alias.chars().count() == 1 {
                lower.contains(&format!("({alias})"))
            } else {
                contains_word(&lower, alias)
            };
            if hit && best.is_none_or(|b| alias.len() > b.len()) {
                best = Some(alias);
            }
        }
        best.and_then(|a| self.aliases.get(a).cloned())
    }
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric() || c == '/';
    haystack.match_indices(needle).any(|(i, _)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub magnitude: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(magnitude: f64, unit: Unit) -> Quantity {
        debug_assert!(magnitude.is_finite());
        Quantity { magnitude, unit }
    }
}

fn check_dims(from: &Unit, to: &Unit) -> Result<(), UnitError> {
    if from.dimension == to.dimension {
        Ok(())
    } else {
        Err(UnitError::DimensionMismatch {
            from: from.canonical_name.clone(),
            from_dim: from.dimension.clone(),
            to: to.canonical_name.clone(),
            to_dim: to.dimension.clone(),
        })
    }
}

/// Exact factor taking magnitudes in `from` to magnitudes in `to`.
pub fn factor(from: &Unit, to: &Unit) -> Result<Factor, UnitError> {
    check_dims(from, to)?;
    Ok(from.scale_to_base / to.scale_to_base)
}

pub fn convert(q: &Quantity, target: &Unit) -> Result<Quantity, UnitError> {
    let f = factor(&q.unit, target)?;
    Ok(Quantity { magnitude: scale(q.magnitude, f), unit: target.clone() })
}

/// Conversion over exact rational magnitudes.
pub fn convert_exact(magnitude: Ratio<i128>, from: &Unit, to: &Unit) -> Result<Ratio<i128>, UnitError> {
    let f = factor(from, to)?;
    Ok(magnitude * Ratio::new(*f.numer() as i128, *f.denom() as i128))
}

mod factor_str {
    use super::{parse_factor, Factor};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &[Factor; 2], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(f.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Factor; 2], D::Error> {
        let v: [String; 2] = Deserialize::deserialize(d)?;
        let p = |t: &str| parse_factor(t).ok_or_else(|| serde::de::Error::custom(format!("bad factor {t}")));
        Ok([p(&v[0])?, p(&v[1])?])
    }
}

/// The chain of conversions API → CAN → VV for one numeric attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionPlan {
    pub api_unit: Unit,
    pub can_unit: Unit,
    pub vv_unit: Unit,
    #[serde(with = "factor_str")]
    pub steps: [Factor; 2],
}

impl ConversionPlan {
    pub fn api_to_can(&self, v: f64) -> f64 {
        scale(v, self.steps[0])
    }

    pub fn can_to_vv(&self, v: f64) -> f64 {
        scale(v, self.steps[1])
    }

    pub fn api_to_vv(&self, v: f64) -> f64 {
        scale(v, self.steps[0] * self.steps[1])
    }

    pub fn vv_to_api(&self, raw: f64) -> f64 {
        scale(raw, (self.steps[0] * self.steps[1]).recip())
    }

    pub fn step_factors(&self) -> [f64; 2] {
        [factor_to_f64(self.steps[0]), factor_to_f64(self.steps[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Reconciled {
    Plan(ConversionPlan),
    InsufficientContext,
}

/// Build the API→CAN→VV conversion chain.
///
/// A stage without a unit takes the unit of its nearest neighbour in the
/// chain; with no unit anywhere the attribute lacks context and is skipped.
pub fn reconcile(api: Option<&Unit>, can: Option<&Unit>, vv: Option<&Unit>) -> Result<Reconciled, UnitError> {
    let present: Vec<&Unit> = [api, can, vv].into_iter().flatten().collect();
    let Some(first) = present.first() else {
        return Ok(Reconciled::InsufficientContext);
    };
    for u in &present[1..] {
        check_dims(first, u)?;
    }
    let api_u = api.or(can).or(vv).expect("at least one present").clone();
    let can_u = can.cloned().unwrap_or_else(|| api.or(vv).expect("at least one present").clone());
    let vv_u = vv.cloned().unwrap_or_else(|| can_u.clone());
    let steps = [factor(&api_u, &can_u)?, factor(&can_u, &vv_u)?];
    Ok(Reconciled::Plan(ConversionPlan { api_unit: api_u, can_unit: can_u, vv_unit: vv_u, steps }))
}
