//! Ranking, allocation, Pareto and risk metrics for routing policies.
//!
//! HitRate and MeanΔ form their top-k sets with the same rule as the
//! offline router: `k = round(p * N)` in (value descending, id ascending)
//! order. When `k` is 0 the two sets trivially agree (HitRate 1) and no gain
//! is collected (MeanΔ 0).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{aligned_routes, bucket_gain, system_quality, Direction, RequestRecord, RiskBucket, RoutingDecision, Scope};
use crate::policy::{check_fraction, priority_order, route_top_k};
use crate::scorers::Scorer;
use crate::budget_count;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share rank mean of (start+1)..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / libm::sqrt(va * vb)).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties. `None` flags a constant
/// input, for which the coefficient is undefined.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "spearman sample size",
            value: a.len() as f64,
        });
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

fn check_aligned<S: AsRef<str>>(ids: &[S], pred: &[f64], truth: &[f64], p: f64) -> Result<usize> {
    check_fraction("p", p)?;
    if ids.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: pred.len(),
        });
    }
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    Ok(budget_count(p, ids.len()))
}

/// Overlap between the router's and the oracle's top-k sets, over k.
pub fn hit_rate_at_p<S: AsRef<str>>(ids: &[S], pred: &[f64], truth: &[f64], p: f64) -> Result<f64> {
    let k = check_aligned(ids, pred, truth, p)?;
    if k == 0 {
        return Ok(1.0);
    }
    let mut chosen = vec![false; ids.len()];
    for &i in priority_order(ids, pred).iter().take(k) {
        chosen[i] = true;
    }
    let hits = priority_order(ids, truth)
        .iter()
        .take(k)
        .filter(|&&i| chosen[i])
        .count();
    Ok(hits as f64 / k as f64)
}

/// Mean true gain over the router's top-k set.
pub fn mean_delta_at_p<S: AsRef<str>>(ids: &[S], pred: &[f64], truth: &[f64], p: f64) -> Result<f64> {
    let k = check_aligned(ids, pred, truth, p)?;
    if k == 0 {
        return Ok(0.0);
    }
    let total: f64 = priority_order(ids, pred)
        .iter()
        .take(k)
        .map(|&i| truth[i])
        .sum();
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub p: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    pub scorer: String,
    /// Strictly increasing in `p`, from 0 to 1 inclusive.
    pub points: Vec<ParetoPoint>,
}

/// 0, 0.05, 0.1, 0.2, …, 0.9, 1.0.
pub fn default_p_grid() -> Vec<f64> {
    let mut grid = vec![0.0, 0.05];
    grid.extend((1..=10).map(|i| i as f64 / 10.0));
    grid
}

fn normalize_grid(p_grid: &[f64]) -> Result<Vec<f64>> {
    let mut grid = Vec::with_capacity(p_grid.len() + 2);
    for &p in p_grid {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter { name: "p", value: p });
        }
        grid.push(p);
    }
    grid.push(0.0);
    grid.push(1.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

fn require_labels(records: &[RequestRecord]) -> Result<()> {
    for r in records {
        r.labels()?;
    }
    Ok(())
}

/// System quality of global top-p routing at every budget of the grid, from
/// precomputed scores aligned with the dataset.
pub fn pareto_from_scores(
    dataset: &Dataset,
    label: &str,
    scores: &[f64],
    p_grid: &[f64],
) -> Result<ParetoCurve> {
    let records = dataset.records();
    if records.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if scores.len() != records.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: scores.len(),
        });
    }
    require_labels(records)?;
    let ids = dataset.ids();
    let points = normalize_grid(p_grid)?
        .into_iter()
        .map(|p| {
            let decisions = route_top_k(&ids, scores, budget_count(p, records.len()));
            Ok(ParetoPoint {
                p,
                quality: system_quality(records, &decisions)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParetoCurve {
        scorer: label.to_string(),
        points,
    })
}

pub fn pareto_sweep(dataset: &Dataset, scorer: &Scorer, p_grid: &[f64]) -> Result<ParetoCurve> {
    require_labels(dataset.records())?;
    let scores = scorer.score_all(dataset.records())?;
    pareto_from_scores(dataset, scorer.label(), &scores, p_grid)
}

/// Gain buckets over the requests routed to the large model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskHistogram {
    /// Indexed by [`RiskBucket::index`].
    pub counts: [usize; 4],
    pub proportions: [f64; 4],
    pub n_large: usize,
    /// Set when nothing was routed to the large model.
    pub empty: bool,
}

impl RiskHistogram {
    pub fn count(&self, bucket: RiskBucket) -> usize {
        self.counts[bucket.index()]
    }

    pub fn proportion(&self, bucket: RiskBucket) -> f64 {
        self.proportions[bucket.index()]
    }
}

pub fn risk_histogram(records: &[RequestRecord], decisions: &[RoutingDecision]) -> Result<RiskHistogram> {
    let routes = aligned_routes(records, decisions)?;
    let mut counts = [0usize; 4];
    for (record, route) in records.iter().zip(routes) {
        if route.is_large() {
            counts[bucket_gain(record.gain()?)?.index()] += 1;
        }
    }
    let n_large: usize = counts.iter().sum();
    let proportions = if n_large == 0 {
        [0.0; 4]
    } else {
        counts.map(|c| c as f64 / n_large as f64)
    };
    Ok(RiskHistogram {
        counts,
        proportions,
        n_large,
        empty: n_large == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    /// `None` when either ranking is constant.
    pub spearman: Option<f64>,
    pub hitrate_at_p: f64,
    pub mean_delta_at_p: f64,
    pub system_quality: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterEvaluation {
    pub scorer: String,
    pub per_direction: Vec<EvalReport>,
    /// Global row: Spearman and system quality over the full set, HitRate and
    /// MeanΔ macro-averaged over the evaluated directions.
    pub average: EvalReport,
    /// Directions with fewer than two records; they are routed but not
    /// scored.
    pub skipped: Vec<Direction>,
    /// Direction-local top-p decisions for every record, in record order.
    pub decisions: Vec<RoutingDecision>,
}

impl RouterEvaluation {
    pub fn rows(&self) -> impl Iterator<Item = &EvalReport> {
        self.per_direction.iter().chain(core::iter::once(&self.average))
    }
}

/// Fixed-budget evaluation from precomputed scores aligned with the dataset.
pub fn evaluate_scores(dataset: &Dataset, label: &str, scores: &[f64], p: f64) -> Result<RouterEvaluation> {
    check_fraction("p", p)?;
    let records = dataset.records();
    if scores.len() != records.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: scores.len(),
        });
    }
    let gains = dataset.gains()?;
    let ids = dataset.ids();
    let mut decisions: Vec<Option<RoutingDecision>> = vec![None; records.len()];
    let mut per_direction = Vec::new();
    let mut skipped = Vec::new();

    for (direction, idx) in dataset.indices_by_direction() {
        let sub_ids: Vec<&str> = idx.iter().map(|&i| ids[i]).collect();
        let sub_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let sub_gains: Vec<f64> = idx.iter().map(|&i| gains[i]).collect();
        let sub_decisions = route_top_k(&sub_ids, &sub_scores, budget_count(p, idx.len()));
        if idx.len() < 2 {
            skipped.push(direction.clone());
        } else {
            let sub_records: Vec<RequestRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            per_direction.push(EvalReport {
                scope: Scope::Direction(direction.clone()),
                spearman: spearman(&sub_scores, &sub_gains)?,
                hitrate_at_p: hit_rate_at_p(&sub_ids, &sub_scores, &sub_gains, p)?,
                mean_delta_at_p: mean_delta_at_p(&sub_ids, &sub_scores, &sub_gains, p)?,
                system_quality: system_quality(&sub_records, &sub_decisions)?,
                p,
                n: idx.len(),
            });
        }
        for (&i, d) in idx.iter().zip(sub_decisions) {
            decisions[i] = Some(d);
        }
    }
    if per_direction.is_empty() {
        return Err(Error::EmptyInput("directions with at least two records"));
    }
    let decisions: Vec<RoutingDecision> = decisions.into_iter().map(|d| d.expect("every record routed")).collect();
    let rows = per_direction.len() as f64;
    let average = EvalReport {
        scope: Scope::Global,
        spearman: spearman(scores, &gains)?,
        hitrate_at_p: per_direction.iter().map(|r| r.hitrate_at_p).sum::<f64>() / rows,
        mean_delta_at_p: per_direction.iter().map(|r| r.mean_delta_at_p).sum::<f64>() / rows,
        system_quality: system_quality(records, &decisions)?,
        p,
        n: records.len(),
    };
    Ok(RouterEvaluation {
        scorer: label.to_string(),
        per_direction,
        average,
        skipped,
        decisions,
    })
}

pub fn evaluate_router(dataset: &Dataset, scorer: &Scorer, p: f64) -> Result<RouterEvaluation> {
    dataset.gains()?;
    let scores = scorer.score_all(dataset.records())?;
    evaluate_scores(dataset, scorer.label(), &scores, p)
}
