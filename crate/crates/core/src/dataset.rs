use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Direction, RequestRecord};

/// A validated collection of records with unique ids and one feature width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    records: Vec<RequestRecord>,
    /// 0 when no record carries features.
    feature_dim: usize,
    directions: BTreeSet<Direction>,
}

impl Dataset {
    pub fn new(records: Vec<RequestRecord>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut feature_dim = None;
        let mut directions = BTreeSet::new();
        for record in &records {
            record.validate()?;
            if !ids.insert(record.id.as_str()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            if let Some(features) = &record.features {
                match feature_dim {
                    None => feature_dim = Some(features.len()),
                    Some(d) if d != features.len() => {
                        return Err(Error::InvalidRecord {
                            id: record.id.clone(),
                            reason: alloc::format!(
                                "feature dimension {} differs from dataset dimension {d}",
                                features.len()
                            ),
                        })
                    }
                    Some(_) => {}
                }
            }
            directions.insert(record.direction.clone());
        }
        drop(ids);
        Ok(Dataset {
            records,
            feature_dim: feature_dim.unwrap_or(0),
            directions,
        })
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RequestRecord> {
        self.records
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn directions(&self) -> &BTreeSet<Direction> {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// True gains in record order; fails on the first unlabeled record.
    pub fn gains(&self) -> Result<Vec<f64>> {
        self.records.iter().map(RequestRecord::gain).collect()
    }

    /// Record indices grouped by direction, in record order within a group.
    pub fn indices_by_direction(&self) -> BTreeMap<&Direction, Vec<usize>> {
        let mut groups: BTreeMap<&Direction, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            groups.entry(&r.direction).or_default().push(i);
        }
        groups
    }

    /// Subset of records matching `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&RequestRecord) -> bool) -> Dataset {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::new(records).expect("subset of a valid dataset is valid")
    }
}
