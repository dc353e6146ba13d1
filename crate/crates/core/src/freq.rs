use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency assigned to tokens missing from the table unless configured.
pub const DEFAULT_FLOOR_FREQ: f64 = 1e-8;

/// Relative unigram frequencies with an out-of-vocabulary floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqTable {
    entries: BTreeMap<String, f64>,
    floor_freq: f64,
}

fn check_freq(token: &str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidFrequency {
            token: token.into(),
            value,
        })
    }
}

impl FreqTable {
    pub fn new(floor_freq: f64) -> Result<Self> {
        if !(floor_freq > 0.0 && floor_freq <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "floor_freq",
                value: floor_freq,
            });
        }
        Ok(FreqTable {
            entries: BTreeMap::new(),
            floor_freq,
        })
    }

    pub fn from_entries<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, f64)>,
        floor_freq: f64,
    ) -> Result<Self> {
        let mut table = FreqTable::new(floor_freq)?;
        for (token, value) in entries {
            table.insert(token.into(), value)?;
        }
        Ok(table)
    }

    /// Adds a token; duplicates and frequencies outside `(0, 1]` are rejected.
    pub fn insert(&mut self, token: String, value: f64) -> Result<()> {
        check_freq(&token, value)?;
        if self.entries.contains_key(&token) {
            return Err(Error::DuplicateToken(token));
        }
        self.entries.insert(token, value);
        Ok(())
    }

    pub fn freq(&self, token: &str) -> f64 {
        self.entries.get(token).copied().unwrap_or(self.floor_freq)
    }

    pub fn floor_freq(&self) -> f64 {
        self.floor_freq
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl Default for FreqTable {
    fn default() -> Self {
        FreqTable {
            entries: BTreeMap::new(),
            floor_freq: DEFAULT_FLOOR_FREQ,
        }
    }
}
