//! Closed-form ridge fit of the linear gain (or quality) head over exported
//! small-model representations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::spearman;
use crate::hash::{fingerprint, keyed_u64};
use crate::linalg::SquareMatrix;
use crate::model::{Direction, RequestRecord};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const MIN_FEATURE_SCALE: f64 = 1e-12;
const PIVOT_REL_TOL: f64 = 1e-13;

/// What the head regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// `q_large - q_small`.
    Gain,
    /// `q_small`; routing priority is the negated prediction.
    Quality,
}

impl Target {
    pub fn label(self, record: &RequestRecord) -> Result<f64> {
        match self {
            Target::Gain => record.gain(),
            Target::Quality => record.q_small.ok_or_else(|| Error::IncompleteLabels {
                id: record.id.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub target: Target,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub lambda: f64,
    pub train_fingerprint: String,
}

impl LinearHead {
    /// A head acting directly on raw features (mean 0, scale 1).
    pub fn identity(weights: Vec<f64>, bias: f64, target: Target) -> Self {
        let dim = weights.len();
        LinearHead {
            weights,
            bias,
            target,
            feature_mean: vec![0.0; dim],
            feature_scale: vec![1.0; dim],
            lambda: 0.0,
            train_fingerprint: String::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.weights.len();
        for len in [self.feature_mean.len(), self.feature_scale.len()] {
            if len != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: len,
                });
            }
        }
        if let Some(&s) = self
            .feature_scale
            .iter()
            .find(|&&s| !(s >= MIN_FEATURE_SCALE))
        {
            return Err(Error::InvalidParameter {
                name: "feature_scale",
                value: s,
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }

    /// Raw regression output: predicted gain or predicted small-model quality.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.len(),
            });
        }
        let mut acc = self.bias;
        for (j, &x) in features.iter().enumerate() {
            acc += self.weights[j] * (x - self.feature_mean[j]) / self.feature_scale[j];
        }
        Ok(acc)
    }

    /// Priority under the higher-routes-first convention.
    pub fn routing_score(&self, features: &[f64]) -> Result<f64> {
        let y = self.predict(features)?;
        Ok(match self.target {
            Target::Gain => y,
            Target::Quality => -y,
        })
    }

    /// Weights and bias expressed on the raw (unstandardized) feature scale.
    pub fn effective_coefficients(&self) -> (Vec<f64>, f64) {
        let weights: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.feature_scale)
            .map(|(w, s)| w / s)
            .collect();
        let shift: f64 = weights
            .iter()
            .zip(&self.feature_mean)
            .map(|(w, m)| w * m)
            .sum();
        (weights, self.bias - shift)
    }
}

fn record_features(record: &RequestRecord) -> Result<&[f64]> {
    record
        .features
        .as_deref()
        .ok_or_else(|| Error::MissingSignal {
            id: record.id.clone(),
            signal: "features",
        })
}

/// Partitions by keyed hash of the id: the `round(ratio * n)` records with the
/// smallest `(hash, id)` form the held-out side. Record order is preserved on
/// both sides.
pub fn split_dataset(dataset: &Dataset, heldout_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(heldout_ratio > 0.0 && heldout_ratio < 1.0) {
        return Err(Error::InvalidParameter {
            name: "heldout_ratio",
            value: heldout_ratio,
        });
    }
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyInput("dataset"));
    }
    let n_heldout = crate::budget_count(heldout_ratio, n);
    if n_heldout == 0 || n_heldout == n {
        return Err(Error::DegenerateSplit {
            train: n - n_heldout,
            heldout: n_heldout,
        });
    }
    let records = dataset.records();
    let mut order: Vec<(u64, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (keyed_u64(seed, &r.id), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| records[a.1].id.cmp(&records[b.1].id)));
    let mut is_heldout = vec![false; n];
    for &(_, i) in &order[..n_heldout] {
        is_heldout[i] = true;
    }
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (record, held) in records.iter().zip(is_heldout) {
        if held {
            heldout.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(heldout)?))
}

/// Ridge regression with per-dimension standardization and an unpenalized
/// bias:
///
/// `argmin_{w,b} Σ (wᵀz + b − y)² + λ‖w‖²`, `z = (x − mean) / scale`.
///
/// Features are standardized with the population standard deviation; a
/// constant column keeps scale 1 so it stays exactly zero after centering.
/// The weight system `(Z_cᵀ Z_c + λI) w = Z_cᵀ (y − ȳ)` over re-centered
/// standardized features is solved by Cholesky, then `b = ȳ − wᵀ z̄`.
/// Accumulation runs in record order, so equal inputs give bit-identical heads.
pub fn fit_linear_head(train: &Dataset, target: Target, lambda: f64) -> Result<LinearHead> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    let records = train.records();
    if records.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut xs = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    for record in records {
        xs.push(record_features(record)?);
        ys.push(target.label(record)?);
    }
    let dim = xs[0].len();
    let n = records.len() as f64;

    let mut mean = vec![0.0; dim];
    for x in &xs {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for x in &xs {
        for j in 0..dim {
            let d = x[j] - mean[j];
            scale[j] += d * d;
        }
    }
    for s in scale.iter_mut() {
        let std = libm::sqrt(*s / n);
        *s = if std < MIN_FEATURE_SCALE { 1.0 } else { std };
    }

    let standardized: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..dim).map(|j| (x[j] - mean[j]) / scale[j]).collect())
        .collect();
    let mut z_mean = vec![0.0; dim];
    for z in &standardized {
        for (m, v) in z_mean.iter_mut().zip(z) {
            *m += v;
        }
    }
    z_mean.iter_mut().for_each(|m| *m /= n);
    let y_mean = ys.iter().sum::<f64>() / n;

    let mut gram = SquareMatrix::zeros(dim);
    let mut rhs = vec![0.0; dim];
    let mut centered = vec![0.0; dim];
    for (z, &y) in standardized.iter().zip(&ys) {
        for j in 0..dim {
            centered[j] = z[j] - z_mean[j];
        }
        let yc = y - y_mean;
        for i in 0..dim {
            rhs[i] += centered[i] * yc;
            for j in 0..=i {
                gram.add(i, j, centered[i] * centered[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            let v = gram.get(i, j);
            gram.set(j, i, v);
        }
        gram.add(i, i, lambda);
    }
    let weights = if dim == 0 {
        Vec::new()
    } else {
        match gram.cholesky(PIVOT_REL_TOL) {
            Some(chol) => chol.solve(&rhs),
            None if lambda == 0.0 => return Err(Error::RegularizationRequired),
            None => return Err(Error::NotPositiveDefinite),
        }
    };
    let bias = y_mean - weights.iter().zip(&z_mean).map(|(w, m)| w * m).sum::<f64>();

    Ok(LinearHead {
        weights,
        bias,
        target,
        feature_mean: mean,
        feature_scale: scale,
        lambda,
        train_fingerprint: fingerprint(records.iter().map(|r| r.id.as_str())),
    })
}

/// One head per direction, each fit on that direction's records only.
pub fn fit_per_direction(
    train: &Dataset,
    target: Target,
    lambda: f64,
) -> Result<BTreeMap<Direction, LinearHead>> {
    let mut heads = BTreeMap::new();
    for direction in train.directions() {
        let subset = train.filter(|r| &r.direction == direction);
        heads.insert(direction.clone(), fit_linear_head(&subset, target, lambda)?);
    }
    Ok(heads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Absent when only a held-out evaluation was run.
    pub train_mse: Option<f64>,
    pub heldout_mse: f64,
    /// `None` when the scores or the gains are constant, or gains are
    /// unavailable.
    pub heldout_spearman: Option<f64>,
    pub n_train: usize,
    pub n_heldout: usize,
}

/// Mean squared error of raw predictions against the head's target label.
pub fn mse(head: &LinearHead, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut total = 0.0;
    for record in dataset.records() {
        let d = head.predict(record_features(record)?)? - head.target.label(record)?;
        total += d * d;
    }
    Ok(total / dataset.len() as f64)
}

/// Held-out MSE and the rank correlation between routing scores and true
/// gains.
pub fn evaluate_head(head: &LinearHead, heldout: &Dataset) -> Result<TrainReport> {
    let heldout_mse = mse(head, heldout)?;
    let scores = heldout
        .records()
        .iter()
        .map(|r| head.routing_score(record_features(r)?))
        .collect::<Result<Vec<_>>>()?;
    let heldout_spearman = match heldout.gains() {
        Ok(gains) if gains.len() >= 2 => spearman(&scores, &gains)?,
        _ => None,
    };
    Ok(TrainReport {
        train_mse: None,
        heldout_mse,
        heldout_spearman,
        n_train: 0,
        n_heldout: heldout.len(),
    })
}

/// Split, fit on the train side and evaluate on the held-out side.
pub fn train_and_evaluate(
    dataset: &Dataset,
    target: Target,
    lambda: f64,
    heldout_ratio: f64,
    seed: u64,
) -> Result<(LinearHead, TrainReport)> {
    let (train, heldout) = split_dataset(dataset, heldout_ratio, seed)?;
    let head = fit_linear_head(&train, target, lambda)?;
    let mut report = evaluate_head(&head, &heldout)?;
    report.train_mse = Some(mse(&head, &train)?);
    report.n_train = train.len();
    Ok((head, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;
    use alloc::format;
    use proptest::prelude::*;

    /// xorshift-based generator so tests need no RNG crate.
    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }

        fn normalish(&mut self) -> f64 {
            (0..12).map(|_| self.next_f64()).sum::<f64>() - 6.0
        }
    }

    fn dir() -> Direction {
        Direction::new("en-zh").unwrap()
    }

    /// Records whose gain is `target(features)`; q_small fixed at 50.
    fn planted(n: usize, dim: usize, seed: u64, target: impl Fn(&[f64]) -> f64) -> Dataset {
        let mut rng = Lcg(seed | 1);
        let records = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..dim).map(|_| rng.normalish()).collect();
                let g = target(&x);
                RequestRecord::new(format!("r{i}"), dir())
                    .with_labels(50.0, 50.0 + g)
                    .with_features(x)
            })
            .collect();
        Dataset::new(records).unwrap()
    }

    /// Independent oracle: augmented design `[1 | z]`, normal equations with
    /// penalty `diag(0, λ, …, λ)`, Gaussian elimination with partial pivoting.
    fn oracle_fit(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> (Vec<f64>, f64) {
        let n = xs.len();
        let d = xs[0].len();
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let v = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                v.sqrt()
            })
            .collect();
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let mut r = vec![1.0];
                r.extend((0..d).map(|j| (x[j] - mean[j]) / std[j]));
                r
            })
            .collect();
        let m = d + 1;
        let mut a = vec![vec![0.0; m + 1]; m];
        for (r, &y) in rows.iter().zip(ys) {
            for i in 0..m {
                for j in 0..m {
                    a[i][j] += r[i] * r[j];
                }
                a[i][m] += r[i] * y;
            }
        }
        for i in 1..m {
            a[i][i] += lambda;
        }
        for col in 0..m {
            let piv = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..m {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=m {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let theta: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
        (theta[1..].to_vec(), theta[0])
    }

    #[test]
    fn recovers_planted_weights() {
        let ds = planted(1000, 2, 11, |x| 2.0 * x[0] - 3.0 * x[1] + 1.0);
        let head = fit_linear_head(&ds, Target::Gain, 1e-8).unwrap();
        let (w, b) = head.effective_coefficients();
        assert!((w[0] - 2.0).abs() < 1e-4 && (w[1] + 3.0).abs() < 1e-4, "{w:?}");
        assert!((b - 1.0).abs() < 1e-4, "{b}");
        let pred = head.predict(&[1.0, 1.0]).unwrap();
        assert!(pred.abs() < 1e-4);
    }

    #[test]
    fn constant_target_gives_zero_weights() {
        let ds = planted(300, 3, 5, |_| 7.5);
        let head = fit_linear_head(&ds, Target::Gain, 1e-3).unwrap();
        assert!(head.weights.iter().all(|w| w.abs() < 1e-9), "{:?}", head.weights);
        assert!((head.bias - 7.5).abs() < 1e-9);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = Lcg(99);
        let ds = planted(50, 4, 3, |x| {
            x.iter().enumerate().map(|(j, v)| (j as f64 - 1.5) * v).sum::<f64>()
        });
        // perturb gains so the fit is not exact
        let records: Vec<_> = ds
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.q_large = Some(r.q_large.unwrap() + rng.normalish());
                r
            })
            .collect();
        let ds = Dataset::new(records).unwrap();
        let head = fit_linear_head(&ds, Target::Gain, 0.5).unwrap();
        let xs: Vec<Vec<f64>> = ds.records().iter().map(|r| r.features.clone().unwrap()).collect();
        let ys = ds.gains().unwrap();
        let (w, b) = oracle_fit(&xs, &ys, 0.5);
        for (a, e) in head.weights.iter().zip(&w) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
        assert!((head.bias - b).abs() < 1e-8);
    }

    #[test]
    fn normal_equation_residuals_vanish() {
        let ds = planted(80, 3, 8, |x| x[0] * x[1] + x[2]);
        let lambda = 0.7;
        let head = fit_linear_head(&ds, Target::Gain, lambda).unwrap();
        let ys = ds.gains().unwrap();
        let z: Vec<Vec<f64>> = ds
            .records()
            .iter()
            .map(|r| {
                let x = r.features.as_ref().unwrap();
                (0..3).map(|j| (x[j] - head.feature_mean[j]) / head.feature_scale[j]).collect()
            })
            .collect();
        let resid: Vec<f64> = z
            .iter()
            .zip(&ys)
            .map(|(z, y)| z.iter().zip(&head.weights).map(|(a, w)| a * w).sum::<f64>() + head.bias - y)
            .collect();
        let ysum: f64 = ys.iter().map(|y| y.abs()).sum();
        assert!(resid.iter().sum::<f64>().abs() < 1e-8 * ysum.max(1.0));
        for j in 0..3 {
            let grad: f64 = z.iter().zip(&resid).map(|(z, r)| z[j] * r).sum::<f64>() + lambda * head.weights[j];
            assert!(grad.abs() < 1e-8 * ysum.max(1.0), "{grad}");
        }
    }

    #[test]
    fn lambda_zero_singular_system() {
        let records = (0..10)
            .map(|i| {
                let v = i as f64;
                RequestRecord::new(format!("r{i}"), dir())
                    .with_labels(40.0, 40.0 + v)
                    .with_features(vec![v, 2.0 * v])
            })
            .collect();
        let ds = Dataset::new(records).unwrap();
        assert_eq!(
            fit_linear_head(&ds, Target::Gain, 0.0),
            Err(Error::RegularizationRequired)
        );
        assert!(fit_linear_head(&ds, Target::Gain, 1e-3).is_ok());
    }

    #[test]
    fn missing_inputs_rejected() {
        let ds = Dataset::new(vec![RequestRecord::new("a", dir()).with_labels(1.0, 2.0)]).unwrap();
        assert!(matches!(
            fit_linear_head(&ds, Target::Gain, 1e-3),
            Err(Error::MissingSignal { .. })
        ));
        let ds = Dataset::new(vec![RequestRecord::new("a", dir()).with_features(vec![1.0])]).unwrap();
        assert!(matches!(
            fit_linear_head(&ds, Target::Gain, 1e-3),
            Err(Error::IncompleteLabels { .. })
        ));
        let mut rec = RequestRecord::new("a", dir()).with_features(vec![1.0]);
        rec.q_small = Some(30.0);
        let ds = Dataset::new(vec![rec]).unwrap();
        assert!(fit_linear_head(&ds, Target::Quality, 1e-3).is_ok());
    }

    #[test]
    fn split_examples() {
        let ds = planted(10, 1, 1, |x| x[0]);
        let (train, held) = split_dataset(&ds, 0.2, 42).unwrap();
        assert_eq!((train.len(), held.len()), (8, 2));
        let again = split_dataset(&ds, 0.2, 42).unwrap();
        assert_eq!(again.1.ids(), held.ids());
        let one = planted(1, 1, 1, |x| x[0]);
        assert!(matches!(
            split_dataset(&one, 0.5, 1),
            Err(Error::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn evaluate_examples() {
        let ds = planted(400, 3, 21, |x| 1.5 * x[0] - x[1] + 0.25 * x[2] + 2.0);
        let (head, report) = train_and_evaluate(&ds, Target::Gain, 1e-8, 0.25, 3).unwrap();
        assert!(report.heldout_mse < 1e-6);
        assert_eq!(report.heldout_spearman, Some(1.0));
        assert_eq!(report.n_train + report.n_heldout, 400);
        let mut zero = head.clone();
        zero.weights.iter_mut().for_each(|w| *w = 0.0);
        let (_, held) = split_dataset(&ds, 0.25, 3).unwrap();
        assert_eq!(evaluate_head(&zero, &held).unwrap().heldout_spearman, None);
    }

    #[test]
    fn quality_head_negates() {
        let head = LinearHead::identity(vec![1.0, 0.0], 0.0, Target::Quality);
        assert_eq!(head.routing_score(&[3.0, 9.0]).unwrap(), -3.0);
        assert_eq!(head.predict(&[3.0, 9.0]).unwrap(), 3.0);
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let ds = planted(60, 4, 17, |x| x[0] - 2.0 * x[3] + 0.3 * x[1] * x[2]);
        let norms: Vec<f64> = [0.0, 1e-3, 0.1, 1.0, 10.0, 100.0, 1e4]
            .iter()
            .map(|&l| {
                let h = fit_linear_head(&ds, Target::Gain, l).unwrap();
                h.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
    }

    #[test]
    fn deterministic_fit() {
        let ds = planted(100, 5, 4, |x| x[0] + x[4]);
        let a = fit_linear_head(&ds, Target::Gain, 1e-3).unwrap();
        let b = fit_linear_head(&ds, Target::Gain, 1e-3).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn standardization_absorbs_feature_scaling(
            seed in 1u64..10_000,
            factors in prop::collection::vec(0.01f64..100.0, 3),
        ) {
            let ds = planted(40, 3, seed, |x| x[0] - 0.5 * x[1] + x[2] * x[0]);
            let scaled = Dataset::new(ds.records().iter().map(|r| {
                let mut r = r.clone();
                let f = r.features.as_mut().unwrap();
                for (v, k) in f.iter_mut().zip(&factors) { *v *= k; }
                r
            }).collect()).unwrap();
            let h1 = fit_linear_head(&ds, Target::Gain, 0.1).unwrap();
            let h2 = fit_linear_head(&scaled, Target::Gain, 0.1).unwrap();
            for (a, b) in ds.records().iter().zip(scaled.records()) {
                let p1 = h1.predict(a.features.as_ref().unwrap()).unwrap();
                let p2 = h2.predict(b.features.as_ref().unwrap()).unwrap();
                prop_assert!((p1 - p2).abs() < 1e-6, "{} vs {}", p1, p2);
            }
        }
    }
}
