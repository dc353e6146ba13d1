//! Seeded synthetic datasets for tests, acceptance runs and demos.
//!
//! Features are i.i.d. standard normal. Under a planted linear model the gain
//! is `w·φ + b + ε`; the small-model score is then drawn uniformly from the
//! band that keeps both scores in `[0, 100]`. A requested fraction of records
//! is turned into severe regressions (`g <= -5`) on strong small-model
//! outputs (`q_small >= 70`), the pattern guarded routing is meant to catch.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use route_lmt_core::{Dataset, Direction, FreqTable, RequestRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gains of non-severe records are kept above this when severe records are
/// planted, so the severe count is exact.
const NON_SEVERE_FLOOR: f64 = -4.99;
const SEVERE_MIN_Q_SMALL: f64 = 70.0;
const SEVERE_MIN_LOSS: f64 = 5.5;
const SEVERE_MAX_LOSS: f64 = 30.0;
pub const SYNTH_VOCAB: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainModel {
    PlantedLinear {
        weights: Vec<f64>,
        bias: f64,
        noise_sigma: f64,
    },
    /// Scores drawn independently of each other and of the features.
    Independent {
        q_small_dist: QualityDist,
        q_large_dist: QualityDist,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub gain_model: GainModel,
    pub severe_fraction: f64,
    /// Assigned round-robin.
    pub directions: Vec<Direction>,
}

impl SyntheticConfig {
    pub fn planted(n: usize, weights: Vec<f64>, bias: f64, noise_sigma: f64, seed: u64) -> Self {
        SyntheticConfig {
            n,
            feature_dim: weights.len(),
            seed,
            gain_model: GainModel::PlantedLinear {
                weights,
                bias,
                noise_sigma,
            },
            severe_fraction: 0.0,
            directions: vec![Direction::new("en-zh").expect("valid tag")],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.severe_fraction) {
            return bad(format!("severe_fraction {} outside [0, 1]", self.severe_fraction));
        }
        if self.directions.is_empty() {
            return bad("at least one direction is required".into());
        }
        match &self.gain_model {
            GainModel::PlantedLinear {
                weights,
                bias,
                noise_sigma,
            } => {
                if weights.len() != self.feature_dim {
                    return bad(format!(
                        "{} weights for feature_dim {}",
                        weights.len(),
                        self.feature_dim
                    ));
                }
                if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return bad(format!("noise_sigma {noise_sigma} must be >= 0"));
                }
                if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return bad("weights and bias must be finite".into());
                }
            }
            GainModel::Independent {
                q_small_dist,
                q_large_dist,
            } => {
                for dist in [q_small_dist, q_large_dist] {
                    match *dist {
                        QualityDist::Uniform { lo, hi } if lo > hi || lo.is_nan() || hi.is_nan() => {
                            return bad(format!("uniform bounds {lo} > {hi}"))
                        }
                        QualityDist::Normal { sd, .. } if sd < 0.0 || sd.is_nan() => {
                            return bad(format!("normal sd {sd} must be >= 0"))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntheticStats {
    /// Records whose gain or scores were clamped into range.
    pub clamped: usize,
    /// Non-severe records lifted above the severe boundary.
    pub floor_adjusted: usize,
    pub severe: usize,
}

impl SyntheticStats {
    pub fn clamp_rate(&self, n: usize) -> f64 {
        self.clamped as f64 / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub dataset: Dataset,
    pub stats: SyntheticStats,
}

fn draw(dist: &QualityDist, rng: &mut ChaCha8Rng) -> f64 {
    match *dist {
        QualityDist::Uniform { lo, hi } if lo == hi => lo,
        QualityDist::Uniform { lo, hi } => rng.random_range(lo..hi),
        QualityDist::Normal { mean, sd } => {
            Normal::new(mean, sd).expect("validated sd").sample(rng)
        }
    }
}

fn clamp_quality(q: f64, clamped: &mut bool) -> f64 {
    if !(0.0..=100.0).contains(&q) {
        *clamped = true;
    }
    q.clamp(0.0, 100.0)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_severe = route_lmt_core::budget_count(config.severe_fraction, config.n);
    let mut severe = vec![false; config.n];
    for i in sample(&mut rng, config.n, n_severe) {
        severe[i] = true;
    }
    let mut stats = SyntheticStats {
        severe: n_severe,
        ..Default::default()
    };
    let log_vocab = (SYNTH_VOCAB as f64).ln();

    let mut records = Vec::with_capacity(config.n);
    for (i, &is_severe) in severe.iter().enumerate() {
        let features: Vec<f64> = (0..config.feature_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut clamped = false;
        let (q_small, q_large) = match &config.gain_model {
            GainModel::PlantedLinear {
                weights,
                bias,
                noise_sigma,
            } => {
                let noise: f64 = if *noise_sigma > 0.0 {
                    noise_sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let mut g = weights.iter().zip(&features).map(|(w, x)| w * x).sum::<f64>()
                    + bias
                    + noise;
                if is_severe {
                    let q_small = rng.random_range(SEVERE_MIN_Q_SMALL..100.0);
                    let loss = rng.random_range(SEVERE_MIN_LOSS..SEVERE_MAX_LOSS.min(q_small));
                    (q_small, q_small - loss)
                } else {
                    if n_severe > 0 && g <= -5.0 {
                        g = NON_SEVERE_FLOOR;
                        stats.floor_adjusted += 1;
                    }
                    if g.abs() > 100.0 {
                        g = g.clamp(-100.0, 100.0);
                        clamped = true;
                    }
                    let lo = (-g).max(0.0);
                    let hi = (100.0 - g).min(100.0);
                    let q_small = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    (q_small, (q_small + g).clamp(0.0, 100.0))
                }
            }
            GainModel::Independent {
                q_small_dist,
                q_large_dist,
            } => {
                if is_severe {
                    let q_small = rng.random_range(SEVERE_MIN_Q_SMALL..100.0);
                    let loss = rng.random_range(SEVERE_MIN_LOSS..SEVERE_MAX_LOSS.min(q_small));
                    (q_small, q_small - loss)
                } else {
                    let q_small = clamp_quality(draw(q_small_dist, &mut rng), &mut clamped);
                    let mut q_large = clamp_quality(draw(q_large_dist, &mut rng), &mut clamped);
                    if n_severe > 0 && q_large - q_small <= -5.0 {
                        q_large = q_small + NON_SEVERE_FLOOR;
                        stats.floor_adjusted += 1;
                    }
                    (q_small, q_large)
                }
            }
        };
        if clamped {
            stats.clamped += 1;
        }
        let n_tokens = rng.random_range(3..=30);
        let tokens: Vec<String> = (0..n_tokens)
            .map(|_| {
                let rank = (rng.random::<f64>() * log_vocab).exp() as usize;
                format!("tok{}", rank.clamp(1, SYNTH_VOCAB))
            })
            .collect();
        let entropy = rng.sample::<f64, _>(StandardNormal).mul_add(0.7, 1.5).abs();
        let direction = config.directions[i % config.directions.len()].clone();
        records.push(
            RequestRecord::new(format!("syn-{i:06}"), direction)
                .with_labels(q_small, q_large)
                .with_features(features)
                .with_tokens(tokens)
                .with_entropy(entropy),
        );
    }
    if stats.clamped == config.n {
        return Err(Error::Config(
            "every record needed clamping: planted gains exceed the quality range".into(),
        ));
    }
    Ok(SyntheticOutput {
        dataset: Dataset::new(records)?,
        stats,
    })
}

/// Frequency table matching the synthetic vocabulary: `f(tok_r) ∝ 1/r`.
pub fn synthetic_freq_table() -> FreqTable {
    let harmonic: f64 = (1..=SYNTH_VOCAB).map(|r| 1.0 / r as f64).sum();
    FreqTable::from_entries(
        (1..=SYNTH_VOCAB).map(|r| (format!("tok{r}"), 1.0 / (r as f64 * harmonic))),
        1e-8,
    )
    .expect("frequencies in (0, 1]")
}
