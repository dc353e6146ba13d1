//! Request records, routing decisions and the quality arithmetic of a
//! two-tier system.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUALITY_MIN: f64 = 0.0;
pub const QUALITY_MAX: f64 = 100.0;

/// Translation direction tag such as `en-zh`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Direction(String);

impl Direction {
    pub fn new(tag: &str) -> Result<Self> {
        let invalid = || Error::InvalidDirection(tag.to_string());
        let (src, tgt) = tag.split_once('-').ok_or_else(invalid)?;
        let is_code = |code: &str| {
            (2..=8).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase())
        };
        if !is_code(src) || !is_code(tgt) || src == tgt {
            return Err(invalid());
        }
        Ok(Direction(tag.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn source(&self) -> &str {
        self.0.split_once('-').map(|(s, _)| s).unwrap_or(&self.0)
    }

    pub fn target(&self) -> &str {
        self.0.split_once('-').map(|(_, t)| t).unwrap_or(&self.0)
    }
}

impl TryFrom<String> for Direction {
    type Error = Error;

    fn try_from(tag: String) -> Result<Self> {
        Direction::new(&tag)
    }
}

impl From<Direction> for String {
    fn from(d: Direction) -> String {
        d.0
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::new(s)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Aggregation scope of a metric or calibration entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scope {
    Global,
    Direction(Direction),
}

impl Scope {
    pub fn label(&self) -> &str {
        match self {
            Scope::Global => "global",
            Scope::Direction(d) => d.as_str(),
        }
    }
}

impl TryFrom<String> for Scope {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "global" {
            Ok(Scope::Global)
        } else {
            Direction::new(s).map(Scope::Direction)
        }
    }
}

impl From<Scope> for String {
    fn from(s: Scope) -> String {
        s.label().to_string()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One routed unit of traffic.
///
/// Labels are optional so that the same type serves live (unlabeled) traffic
/// and offline evaluation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_small: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_large: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_step_entropy: Option<f64>,
}

impl RequestRecord {
    pub fn new(id: impl Into<String>, direction: Direction) -> Self {
        RequestRecord {
            id: id.into(),
            direction,
            q_small: None,
            q_large: None,
            features: None,
            tokens: None,
            first_step_entropy: None,
        }
    }

    pub fn with_labels(mut self, q_small: f64, q_large: f64) -> Self {
        self.q_small = Some(q_small);
        self.q_large = Some(q_large);
        self
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_tokens<S: Into<String>>(mut self, tokens: impl IntoIterator<Item = S>) -> Self {
        self.tokens = Some(tokens.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_entropy(mut self, entropy: f64) -> Self {
        self.first_step_entropy = Some(entropy);
        self
    }

    /// Checks per-record invariants (score ranges, finite values).
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".to_string()));
        }
        for (name, q) in [("q_small", self.q_small), ("q_large", self.q_large)] {
            if let Some(q) = q {
                if !(QUALITY_MIN..=QUALITY_MAX).contains(&q) {
                    return Err(bad(alloc::format!("{name} = {q} outside [0, 100]")));
                }
            }
        }
        if let Some(h) = self.first_step_entropy {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(bad(alloc::format!("first_step_entropy = {h} must be >= 0")));
            }
        }
        if let Some(features) = &self.features {
            if let Some(i) = features.iter().position(|v| !v.is_finite()) {
                return Err(bad(alloc::format!("features[{i}] is not finite")));
            }
        }
        Ok(())
    }

    /// True marginal gain, if both labels are present.
    pub fn gain(&self) -> Result<f64> {
        match (self.q_small, self.q_large) {
            (Some(s), Some(l)) => gain(s, l),
            _ => Err(Error::IncompleteLabels {
                id: self.id.clone(),
            }),
        }
    }

    pub fn labels(&self) -> Result<(f64, f64)> {
        match (self.q_small, self.q_large) {
            (Some(s), Some(l)) => Ok((s, l)),
            _ => Err(Error::IncompleteLabels {
                id: self.id.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Small,
    Large,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Small => "small",
            Route::Large => "large",
        }
    }

    pub fn is_large(self) -> bool {
        self == Route::Large
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub id: String,
    /// Routing priority; higher means route to the large model.
    pub score: f64,
    pub route: Route,
    /// Position in priority order, 0 = highest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// Gain-interval buckets used for regression-risk analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskBucket {
    SevereLoss,
    MinorLoss,
    Tie,
    SubstantialGain,
}

impl RiskBucket {
    pub const ALL: [RiskBucket; 4] = [
        RiskBucket::SevereLoss,
        RiskBucket::MinorLoss,
        RiskBucket::Tie,
        RiskBucket::SubstantialGain,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskBucket::SevereLoss => "severe_loss",
            RiskBucket::MinorLoss => "minor_loss",
            RiskBucket::Tie => "tie",
            RiskBucket::SubstantialGain => "substantial_gain",
        }
    }
}

fn check_quality(q: f64) -> Result<f64> {
    if (QUALITY_MIN..=QUALITY_MAX).contains(&q) {
        Ok(q)
    } else {
        Err(Error::QualityOutOfRange { value: q })
    }
}

/// Marginal gain of serving a request with the large model.
pub fn gain(q_small: f64, q_large: f64) -> Result<f64> {
    Ok(check_quality(q_large)? - check_quality(q_small)?)
}

/// Returns the route chosen for each record, in record order.
pub(crate) fn aligned_routes(records: &[RequestRecord], decisions: &[RoutingDecision]) -> Result<Vec<Route>> {
    if records.len() != decisions.len() {
        return Err(Error::Alignment(alloc::format!(
            "{} records but {} decisions",
            records.len(),
            decisions.len()
        )));
    }
    if records.iter().zip(decisions).all(|(r, d)| r.id == d.id) {
        return Ok(decisions.iter().map(|d| d.route).collect());
    }
    let mut by_id = BTreeMap::new();
    for d in decisions {
        if by_id.insert(d.id.as_str(), d.route).is_some() {
            return Err(Error::Alignment(alloc::format!("duplicate decision id {:?}", d.id)));
        }
    }
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .copied()
                .ok_or_else(|| Error::Alignment(alloc::format!("no decision for {:?}", r.id)))
        })
        .collect()
}

/// Mean quality of the hybrid system under the given decisions.
pub fn system_quality(records: &[RequestRecord], decisions: &[RoutingDecision]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let routes = aligned_routes(records, decisions)?;
    let mut total = 0.0;
    for (record, route) in records.iter().zip(routes) {
        let (q_small, q_large) = record.labels()?;
        total += match route {
            Route::Large => check_quality(q_large)?,
            Route::Small => check_quality(q_small)?,
        };
    }
    Ok(total / records.len() as f64)
}

/// Splits system quality into the router-independent small-model mean and
/// the mean gain collected by the routed set.
pub fn decompose(records: &[RequestRecord], decisions: &[RoutingDecision]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let routes = aligned_routes(records, decisions)?;
    let (mut small, mut collected) = (0.0, 0.0);
    for (record, route) in records.iter().zip(routes) {
        let (q_small, q_large) = record.labels()?;
        small += q_small;
        if route.is_large() {
            collected += gain(q_small, q_large)?;
        }
    }
    let n = records.len() as f64;
    Ok((small / n, collected / n))
}

/// Buckets a gain: severe loss `g <= -5`, minor loss `-5 < g < -0.5`,
/// tie `|g| <= 0.5`, substantial gain `g > 0.5`.
pub fn bucket_gain(g: f64) -> Result<RiskBucket> {
    if !(-100.0..=100.0).contains(&g) {
        return Err(Error::GainOutOfRange { value: g });
    }
    Ok(if g <= -5.0 {
        RiskBucket::SevereLoss
    } else if g < -0.5 {
        RiskBucket::MinorLoss
    } else if g <= 0.5 {
        RiskBucket::Tie
    } else {
        RiskBucket::SubstantialGain
    })
}
