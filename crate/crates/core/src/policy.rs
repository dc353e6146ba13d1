//! Budget policies: offline top-p selection, threshold calibration,
//! streaming enforcement and guarded routing.
//!
//! Priority order is always (score descending, id ascending); the budget
//! count is `round(p * N)` with halves rounded up.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Direction, RequestRecord, Route, RoutingDecision, Scope};
use crate::{budget_count, ceil_count, floor_count};

pub const DEFAULT_GUARD_QUANTILE: f64 = 0.3;

pub(crate) fn check_fraction(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value: p })
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(&s) => Err(Error::InvalidParameter {
            name: "score",
            value: s,
        }),
        None => Ok(()),
    }
}

/// Indices sorted by (value descending, id ascending).
pub(crate) fn priority_order<S: AsRef<str>>(ids: &[S], values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => ids[a].as_ref().cmp(ids[b].as_ref()),
        other => other,
    });
    order
}

fn decisions_from_order<S: AsRef<str>>(
    ids: &[S],
    scores: &[f64],
    order: &[usize],
    large: &[bool],
) -> Vec<RoutingDecision> {
    let mut rank = vec![0usize; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    (0..ids.len())
        .map(|i| RoutingDecision {
            id: String::from(ids[i].as_ref()),
            score: scores[i],
            route: if large[i] { Route::Large } else { Route::Small },
            rank: Some(rank[i]),
        })
        .collect()
}

/// Routes exactly `k` requests, the highest in priority order, to the large
/// model. `k` may be 0. Decisions come back in input order.
pub(crate) fn route_top_k<S: AsRef<str>>(ids: &[S], scores: &[f64], k: usize) -> Vec<RoutingDecision> {
    let order = priority_order(ids, scores);
    let mut large = vec![false; ids.len()];
    for &i in order.iter().take(k) {
        large[i] = true;
    }
    decisions_from_order(ids, scores, &order, &large)
}

/// Offline budgeted routing of the top `round(p * N)` requests.
pub fn route_top_p<S: AsRef<str>>(scored: &[(S, f64)], p: f64) -> Result<Vec<RoutingDecision>> {
    check_fraction("p", p)?;
    if scored.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let ids: Vec<&str> = scored.iter().map(|(id, _)| id.as_ref()).collect();
    let scores: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    check_scores(&scores)?;
    Ok(route_top_k(&ids, &scores, budget_count(p, scored.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    /// Fraction of calibration scores `>= tau`.
    pub achieved_fraction: f64,
    /// Set when every calibration score is equal.
    pub degenerate: bool,
    pub n: usize,
}

/// Threshold at the `ceil(p * N)`-th largest score, the smallest cut whose
/// pass fraction is at least `p`.
pub fn calibrate_threshold(scores: &[f64], p: f64) -> Result<Calibration> {
    check_fraction("p", p)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("calibration scores"));
    }
    check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ceil_count(p, sorted.len()).max(1);
    let tau = sorted[k - 1];
    let passing = sorted.iter().take_while(|&&s| s >= tau).count();
    Ok(Calibration {
        tau,
        achieved_fraction: passing as f64 / sorted.len() as f64,
        degenerate: sorted[0] == sorted[sorted.len() - 1],
        n: sorted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub p: f64,
    pub tau: f64,
    pub scope: Scope,
    pub n_calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub entries: Vec<CalibrationEntry>,
    pub scorer_fingerprint: String,
}

const P_MATCH_TOL: f64 = 1e-12;

impl CalibrationProfile {
    pub fn new(scorer_fingerprint: impl Into<String>) -> Self {
        CalibrationProfile {
            entries: Vec::new(),
            scorer_fingerprint: scorer_fingerprint.into(),
        }
    }

    /// Adds an entry, replacing any entry with the same `(p, scope)`.
    pub fn upsert(&mut self, entry: CalibrationEntry) {
        match self
            .entries
            .iter_mut()
            .find(|e| e.scope == entry.scope && (e.p - entry.p).abs() < P_MATCH_TOL)
        {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            check_fraction("p", e.p)?;
            if !e.tau.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "tau",
                    value: e.tau,
                });
            }
            if e.n_calibration == 0 {
                return Err(Error::InvalidParameter {
                    name: "n_calibration",
                    value: 0.0,
                });
            }
            if self.entries[..i]
                .iter()
                .any(|o| o.scope == e.scope && (o.p - e.p).abs() < P_MATCH_TOL)
            {
                return Err(Error::InvalidParameter {
                    name: "duplicate p in scope",
                    value: e.p,
                });
            }
        }
        Ok(())
    }

    /// Entry for `p` in the direction's scope, falling back to the global one.
    pub fn lookup(&self, p: f64, direction: Option<&Direction>) -> Option<&CalibrationEntry> {
        let find = |scope: &Scope| {
            self.entries
                .iter()
                .find(|e| &e.scope == scope && (e.p - p).abs() < P_MATCH_TOL)
        };
        direction
            .and_then(|d| find(&Scope::Direction(d.clone())))
            .or_else(|| find(&Scope::Global))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Threshold only; the budget is monitored, not enforced.
    SoftThreshold,
    /// Threshold plus at most `floor(p * window)` large routes per window.
    HardCap,
}

impl BudgetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetMode::SoftThreshold => "threshold",
            BudgetMode::HardCap => "hardcap",
        }
    }
}

/// Counters of the current tumbling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    pub window_size: usize,
    pub routed_large_in_window: usize,
    pub seen_in_window: usize,
    pub mode: BudgetMode,
}

impl BudgetState {
    pub fn new(window_size: usize, mode: BudgetMode) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::InvalidParameter {
                name: "window_size",
                value: 0.0,
            });
        }
        Ok(BudgetState {
            window_size,
            routed_large_in_window: 0,
            seen_in_window: 0,
            mode,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.window_size > 0
            && self.routed_large_in_window <= self.seen_in_window
            && self.seen_in_window <= self.window_size
    }

    /// True when the last request filled the window.
    pub fn window_complete(&self) -> bool {
        self.seen_in_window == self.window_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamReason {
    AboveThreshold,
    BelowThreshold,
    /// Passed the threshold but the window's large-call cap was spent.
    BudgetCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub decision: RoutingDecision,
    pub reason: StreamReason,
}

/// One streaming decision. A full window is reset before the request is
/// counted, so the returned state always describes the window the request
/// landed in.
pub fn route_stream(
    id: &str,
    score: f64,
    tau: f64,
    state: BudgetState,
    p: f64,
) -> (StreamOutcome, BudgetState) {
    let mut next = state;
    if next.seen_in_window >= next.window_size {
        next.seen_in_window = 0;
        next.routed_large_in_window = 0;
    }
    let passes = score >= tau;
    let reason = match next.mode {
        _ if !passes => StreamReason::BelowThreshold,
        BudgetMode::SoftThreshold => StreamReason::AboveThreshold,
        BudgetMode::HardCap => {
            if next.routed_large_in_window < floor_count(p, next.window_size) {
                StreamReason::AboveThreshold
            } else {
                StreamReason::BudgetCap
            }
        }
    };
    let route = if reason == StreamReason::AboveThreshold {
        Route::Large
    } else {
        Route::Small
    };
    next.seen_in_window += 1;
    if route.is_large() {
        next.routed_large_in_window += 1;
    }
    let decision = RoutingDecision {
        id: String::from(id),
        score,
        route,
        rank: None,
    };
    (StreamOutcome { decision, reason }, next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardedRouting {
    /// In input order; ranks follow the gain ordering.
    pub decisions: Vec<RoutingDecision>,
    /// Guard cut: requests with guard score `<= theta` pass.
    pub theta: f64,
    /// Large slots filled from guard-rejected candidates.
    pub backfilled: usize,
}

/// Gain-ranked routing with a lower-tail quality guard.
///
/// `guard_scores` use quality polarity (higher = better small-model output).
/// Walking the gain order, a candidate is admitted only when its guard score
/// is at or below the `guard_quantile` lower quantile. If fewer than
/// `round(p * N)` pass, the remaining slots go to the highest-gain rejected
/// candidates, so the large-model rate stays exactly at the budget.
pub fn route_guarded(
    records: &[RequestRecord],
    gain_scores: &[f64],
    guard_scores: &[f64],
    p: f64,
    guard_quantile: f64,
) -> Result<GuardedRouting> {
    check_fraction("p", p)?;
    check_fraction("guard_quantile", guard_quantile)?;
    if records.len() != gain_scores.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: gain_scores.len(),
        });
    }
    if records.len() != guard_scores.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: guard_scores.len(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    check_scores(gain_scores)?;
    check_scores(guard_scores)?;
    let n = records.len();
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();

    let mut ascending = guard_scores.to_vec();
    ascending.sort_by(f64::total_cmp);
    let theta = ascending[ceil_count(guard_quantile, n).max(1) - 1];

    let k = budget_count(p, n);
    let order = priority_order(&ids, gain_scores);
    let mut large = vec![false; n];
    let mut admitted = 0;
    for &i in &order {
        if admitted == k {
            break;
        }
        if guard_scores[i] <= theta {
            large[i] = true;
            admitted += 1;
        }
    }
    let mut backfilled = 0;
    for &i in &order {
        if admitted == k {
            break;
        }
        if !large[i] {
            large[i] = true;
            admitted += 1;
            backfilled += 1;
        }
    }
    Ok(GuardedRouting {
        decisions: decisions_from_order(&ids, gain_scores, &order, &large),
        theta,
        backfilled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;

    fn large_ids(decisions: &[RoutingDecision]) -> Vec<&str> {
        let mut ids: Vec<&str> = decisions
            .iter()
            .filter(|d| d.route.is_large())
            .map(|d| d.id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    #[test]
    fn top_p_examples() {
        let all = route_top_p(&[("a", 3.0), ("b", 2.0), ("c", 1.0)], 1.0).unwrap();
        assert_eq!(large_ids(&all), ["a", "b", "c"]);
        let half = route_top_p(&[("a", 3.0), ("b", 2.0), ("c", 1.0), ("d", 0.0)], 0.5).unwrap();
        assert_eq!(large_ids(&half), ["a", "b"]);
        let tied = route_top_p(&[("c", 1.0), ("b", 1.0), ("a", 1.0)], 1.0 / 3.0).unwrap();
        assert_eq!(large_ids(&tied), ["a"]);
        assert_eq!(tied[2].rank, Some(0));
        assert_eq!(tied[0].rank, Some(2));
        assert!(route_top_p::<&str>(&[], 0.5).is_err());
        assert!(route_top_p(&[("a", 1.0)], 0.0).is_err());
        assert!(route_top_p(&[("a", f64::NAN)], 0.5).is_err());
    }

    #[test]
    fn calibration_examples() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        let c = calibrate_threshold(&scores, 0.3).unwrap();
        assert_eq!(c.tau, 8.0);
        assert_eq!(c.achieved_fraction, 0.3);
        assert!(!c.degenerate);
        let flat = calibrate_threshold(&[2.5; 7], 0.4).unwrap();
        assert_eq!((flat.tau, flat.achieved_fraction, flat.degenerate), (2.5, 1.0, true));
        let single = calibrate_threshold(&[5.0], 0.5).unwrap();
        assert_eq!((single.tau, single.achieved_fraction), (5.0, 1.0));
        assert!(calibrate_threshold(&[], 0.5).is_err());
    }

    #[test]
    fn stream_soft_threshold_is_inclusive() {
        let state = BudgetState::new(10, BudgetMode::SoftThreshold).unwrap();
        let (out, next) = route_stream("a", 1.5, 1.5, state, 0.3);
        assert_eq!(out.decision.route, Route::Large);
        assert_eq!(next.seen_in_window, 1);
        let (out, _) = route_stream("b", 1.4, 1.5, next, 0.3);
        assert_eq!(out.reason, StreamReason::BelowThreshold);
    }

    #[test]
    fn stream_hard_cap() {
        let state = BudgetState {
            window_size: 10,
            routed_large_in_window: 3,
            seen_in_window: 5,
            mode: BudgetMode::HardCap,
        };
        let (out, next) = route_stream("a", 100.0, 0.0, state, 0.3);
        assert_eq!(out.decision.route, Route::Small);
        assert_eq!(out.reason, StreamReason::BudgetCap);
        assert_eq!((next.seen_in_window, next.routed_large_in_window), (6, 3));

        let full = BudgetState {
            window_size: 10,
            routed_large_in_window: 3,
            seen_in_window: 10,
            mode: BudgetMode::HardCap,
        };
        let (out, next) = route_stream("b", 100.0, 0.0, full, 0.3);
        assert_eq!(out.decision.route, Route::Large);
        assert_eq!((next.seen_in_window, next.routed_large_in_window), (1, 1));
    }

    fn recs(n: usize) -> Vec<RequestRecord> {
        let d = Direction::new("en-zh").unwrap();
        (0..n).map(|i| RequestRecord::new(format!("r{i:02}"), d.clone())).collect()
    }

    #[test]
    fn guard_vacuous_when_scores_equal() {
        let records = recs(10);
        let gains: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        let guarded = route_guarded(&records, &gains, &[60.0; 10], 0.3, 0.3).unwrap();
        assert_eq!(guarded.theta, 60.0);
        assert_eq!(guarded.backfilled, 0);
        let scored: Vec<(&str, f64)> = records.iter().map(|r| r.id.as_str()).zip(gains.iter().copied()).collect();
        assert_eq!(guarded.decisions, route_top_p(&scored, 0.3).unwrap());
    }

    #[test]
    fn guard_skips_strong_small_outputs() {
        let records = recs(10);
        // gain ranks: r00 > r01 > ... > r09
        let gains: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        // top-2 by gain have the two highest qualities; ranks 3..5 are weakest
        let guard = [95.0, 90.0, 10.0, 20.0, 30.0, 50.0, 55.0, 60.0, 65.0, 70.0];
        let out = route_guarded(&records, &gains, &guard, 0.3, 0.3).unwrap();
        assert_eq!(out.theta, 30.0);
        assert_eq!(out.backfilled, 0);
        assert_eq!(large_ids(&out.decisions), ["r02", "r03", "r04"]);
    }

    #[test]
    fn guard_backfills_to_budget() {
        let records = recs(10);
        let gains: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        let guard = [95.0, 90.0, 10.0, 80.0, 80.0, 80.0, 80.0, 80.0, 80.0, 80.0];
        let out = route_guarded(&records, &gains, &guard, 0.5, 0.1).unwrap();
        assert_eq!(out.theta, 10.0);
        assert_eq!(out.backfilled, 4);
        assert_eq!(large_ids(&out.decisions), ["r00", "r01", "r02", "r03", "r04"]);
        assert!(matches!(
            route_guarded(&records, &gains, &guard[..9], 0.5, 0.1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn profile_lookup_falls_back_to_global() {
        let en_zh = Direction::new("en-zh").unwrap();
        let mut profile = CalibrationProfile::new("fp");
        profile.upsert(CalibrationEntry { p: 0.3, tau: 1.0, scope: Scope::Global, n_calibration: 10 });
        profile.upsert(CalibrationEntry {
            p: 0.3,
            tau: 2.0,
            scope: Scope::Direction(en_zh.clone()),
            n_calibration: 5,
        });
        profile.upsert(CalibrationEntry { p: 0.3, tau: 1.5, scope: Scope::Global, n_calibration: 10 });
        assert_eq!(profile.entries.len(), 2);
        assert!(profile.validate().is_ok());
        assert_eq!(profile.lookup(0.3, Some(&en_zh)).unwrap().tau, 2.0);
        let ru_en = Direction::new("ru-en").unwrap();
        assert_eq!(profile.lookup(0.3, Some(&ru_en)).unwrap().tau, 1.5);
        assert!(profile.lookup(0.5, None).is_none());
    }

    proptest! {
        #[test]
        fn top_p_routes_exact_budget(
            scores in prop::collection::vec(-5i32..5, 1..80),
            p in 0.01f64..=1.0,
        ) {
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("r{i:03}")).collect();
            let scored: Vec<(&str, f64)> = ids.iter().map(String::as_str).zip(scores.iter().map(|&s| s as f64)).collect();
            let out = route_top_p(&scored, p).unwrap();
            let k = budget_count(p, scores.len());
            prop_assert_eq!(out.iter().filter(|d| d.route.is_large()).count(), k);
            // ranks form a permutation and Large = first k ranks
            let mut ranks: Vec<usize> = out.iter().map(|d| d.rank.unwrap()).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (0..scores.len()).collect::<Vec<_>>());
            for d in &out {
                prop_assert_eq!(d.route.is_large(), d.rank.unwrap() < k);
            }
        }

        #[test]
        fn calibration_matches_top_set_for_distinct_scores(
            raw in prop::collection::btree_set(-10_000i64..10_000, 1..60),
            p in 0.01f64..=1.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&s| s as f64 / 7.0).collect();
            let c = calibrate_threshold(&scores, p).unwrap();
            let k = ceil_count(p, scores.len()).max(1);
            let above = scores.iter().filter(|&&s| s >= c.tau).count();
            prop_assert_eq!(above, k);
            prop_assert!(c.achieved_fraction >= p - 1e-12);
        }

        #[test]
        fn hard_cap_never_exceeded(
            scores in prop::collection::vec(0.0f64..1.0, 1..400),
            window in 1usize..50,
            p in 0.01f64..=1.0,
            tau in 0.0f64..1.0,
        ) {
            let mut state = BudgetState::new(window, BudgetMode::HardCap).unwrap();
            let cap = floor_count(p, window);
            for (i, &s) in scores.iter().enumerate() {
                let (_, next) = route_stream(&format!("{i}"), s, tau, state, p);
                prop_assert!(next.is_valid());
                prop_assert!(next.routed_large_in_window <= cap);
                state = next;
            }
        }

        #[test]
        fn guarded_routes_exact_budget(
            pairs in prop::collection::vec((-10.0f64..10.0, 0.0f64..100.0), 1..60),
            p in 0.01f64..=1.0,
            q in 0.01f64..=1.0,
        ) {
            let records = recs(pairs.len());
            let gains: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let guard: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let out = route_guarded(&records, &gains, &guard, p, q).unwrap();
            prop_assert_eq!(
                out.decisions.iter().filter(|d| d.route.is_large()).count(),
                budget_count(p, pairs.len())
            );
        }
    }
}
