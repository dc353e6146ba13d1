//! Budgeted routing between a small and a large translation model.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation over in-memory records: marginal-gain arithmetic, routing
//! scorers, the closed-form linear gain head, budget policies and the
//! evaluation metrics. File formats, synthetic data, the HTTP service and the
//! CLI live in the `route-lmt` crate.
//!
//! Every scorer follows one polarity: a higher score means a higher priority
//! for the large model.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod freq;
pub mod hash;
mod linalg;
pub mod model;
pub mod policy;
pub mod scorers;
pub mod trainer;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{
    evaluate_router, hit_rate_at_p, mean_delta_at_p, pareto_sweep, risk_histogram, spearman,
    EvalReport, ParetoCurve, ParetoPoint, RiskHistogram, RouterEvaluation,
};
pub use freq::FreqTable;
pub use model::{
    bucket_gain, decompose, gain, system_quality, Direction, RequestRecord, RiskBucket, Route,
    RoutingDecision, Scope,
};
pub use policy::{
    calibrate_threshold, route_guarded, route_stream, route_top_p, BudgetMode, BudgetState,
    Calibration, CalibrationEntry, CalibrationProfile, GuardedRouting, StreamOutcome,
};
pub use scorers::Scorer;
pub use trainer::{
    evaluate_head, fit_linear_head, fit_per_direction, split_dataset, LinearHead, Target,
    TrainReport,
};

/// Lowest probability mass treated as a budget fraction.
pub(crate) const COUNT_EPS: f64 = 1e-9;

/// `round(p * n)` with halves rounded up.
///
/// A small tolerance absorbs representation error so that e.g. `0.3 * 10`
/// counts as exactly 3.
pub fn budget_count(p: f64, n: usize) -> usize {
    let k = libm::floor(p * n as f64 + 0.5 + COUNT_EPS) as usize;
    k.min(n)
}

/// `ceil(p * n)`, tolerant to representation error.
pub fn ceil_count(p: f64, n: usize) -> usize {
    let k = libm::ceil(p * n as f64 - COUNT_EPS);
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

/// `floor(p * n)`, tolerant to representation error.
pub fn floor_count(p: f64, n: usize) -> usize {
    let k = libm::floor(p * n as f64 + COUNT_EPS);
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}
