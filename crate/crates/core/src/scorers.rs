//! Routing-score producers. Every scorer returns a priority where higher
//! means "send to the large model"; quality-style signals are negated here so
//! policies never branch on the scorer kind.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::freq::FreqTable;
use crate::hash::keyed_unit;
use crate::model::RequestRecord;
use crate::trainer::{LinearHead, Target};

pub const DEFAULT_BOTTOM_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Random { seed: u64 },
    Length,
    Rarity { table: FreqTable, bottom_fraction: f64 },
    Entropy,
    Learned { head: LinearHead },
    OracleGain,
    OracleQuality,
}

fn missing(record: &RequestRecord, signal: &'static str) -> Error {
    Error::MissingSignal {
        id: record.id.clone(),
        signal,
    }
}

/// Number of source tokens.
pub fn score_length(record: &RequestRecord) -> Result<f64> {
    record
        .tokens
        .as_ref()
        .map(|t| t.len() as f64)
        .ok_or_else(|| missing(record, "tokens"))
}

/// Mean surprisal `-ln f(w)` over the `ceil(bottom_fraction * |tokens|)`
/// least frequent tokens. Equal frequencies keep token order.
pub fn score_rarity(record: &RequestRecord, table: &FreqTable, bottom_fraction: f64) -> Result<f64> {
    if !(bottom_fraction > 0.0 && bottom_fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "bottom_fraction",
            value: bottom_fraction,
        });
    }
    let tokens = match record.tokens.as_deref() {
        Some(t) if !t.is_empty() => t,
        _ => return Err(missing(record, "tokens")),
    };
    let mut freqs: Vec<f64> = tokens.iter().map(|t| table.freq(t)).collect();
    freqs.sort_by(f64::total_cmp);
    let k = crate::ceil_count(bottom_fraction, freqs.len()).max(1);
    let total: f64 = freqs[..k].iter().map(|&f| -libm::log(f)).sum();
    Ok(total / k as f64)
}

/// First-decoding-step entropy, passed through.
pub fn score_entropy(record: &RequestRecord) -> Result<f64> {
    record
        .first_step_entropy
        .ok_or_else(|| missing(record, "first_step_entropy"))
}

/// Uniform `[0, 1)` value keyed by `(seed, id)`; see [`crate::hash`].
pub fn score_random(record: &RequestRecord, seed: u64) -> f64 {
    keyed_unit(seed, &record.id)
}

pub fn score_learned(record: &RequestRecord, head: &LinearHead) -> Result<f64> {
    let features = record
        .features
        .as_deref()
        .ok_or_else(|| missing(record, "features"))?;
    head.routing_score(features)
}

pub fn score_oracle_gain(record: &RequestRecord) -> Result<f64> {
    record.gain()
}

/// `-q_small`: the weakest small-model outputs go first.
pub fn score_oracle_quality(record: &RequestRecord) -> Result<f64> {
    record
        .q_small
        .map(|q| -q)
        .ok_or_else(|| Error::IncompleteLabels {
            id: record.id.clone(),
        })
}

impl Scorer {
    pub fn rarity(table: FreqTable) -> Self {
        Scorer::Rarity {
            table,
            bottom_fraction: DEFAULT_BOTTOM_FRACTION,
        }
    }

    /// Stable name used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Scorer::Random { .. } => "random",
            Scorer::Length => "length",
            Scorer::Rarity { .. } => "rarity",
            Scorer::Entropy => "entropy",
            Scorer::Learned { head } => match head.target {
                Target::Gain => "learned-gain",
                Target::Quality => "learned-quality",
            },
            Scorer::OracleGain => "oracle-gain",
            Scorer::OracleQuality => "oracle-quality",
        }
    }

    pub fn score(&self, record: &RequestRecord) -> Result<f64> {
        match self {
            Scorer::Random { seed } => Ok(score_random(record, *seed)),
            Scorer::Length => score_length(record),
            Scorer::Rarity {
                table,
                bottom_fraction,
            } => score_rarity(record, table, *bottom_fraction),
            Scorer::Entropy => score_entropy(record),
            Scorer::Learned { head } => score_learned(record, head),
            Scorer::OracleGain => score_oracle_gain(record),
            Scorer::OracleQuality => score_oracle_quality(record),
        }
    }

    pub fn score_all(&self, records: &[RequestRecord]) -> Result<Vec<f64>> {
        records.iter().map(|r| self.score(r)).collect()
    }
}
