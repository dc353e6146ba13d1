//! `route-lmt` command line.
//!
//! Precedence is flags, then `ROUTE_LMT_*` environment variables, then
//! defaults. The effective configuration is echoed into `report.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use route_lmt_core::eval::{default_p_grid, evaluate_scores, pareto_from_scores};
use route_lmt_core::policy::{StreamReason, DEFAULT_GUARD_QUANTILE};
use route_lmt_core::scorers::DEFAULT_BOTTOM_FRACTION;
use route_lmt_core::trainer::{mse, train_and_evaluate, DEFAULT_LAMBDA};
use route_lmt_core::{
    calibrate_threshold, evaluate_head, fit_per_direction, risk_histogram, route_guarded,
    route_stream, route_top_p, split_dataset, BudgetMode, BudgetState, CalibrationEntry,
    CalibrationProfile, Dataset, Direction, RoutingDecision, Scope, Scorer, Target,
};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest;
use crate::report::{emit_report, LabeledRisk, ReportBundle};
use crate::service::{self, ServiceConfig};
use crate::synth::{self, GainModel, QualityDist, SyntheticConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "route-lmt", version, about = "Budgeted small/large translation routing")]
pub struct Cli {
    /// Seed for synthesis, splits and the random scorer.
    #[arg(long, global = true, env = "ROUTE_LMT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "ROUTE_LMT_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Fit a linear gain or quality head.
    Train(TrainArgs),
    /// Calibrate streaming thresholds into a profile.
    Calibrate(CalibrateArgs),
    /// Route a dataset and write decisions.
    Route(RouteArgs),
    /// Fixed-budget metrics per direction.
    Eval(EvalArgs),
    /// Quality versus budget sweep.
    Sweep(SweepArgs),
    /// Gain-bucket histogram of routed requests.
    Risk(RiskArgs),
    /// Run the HTTP routing service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerArg {
    Length,
    Rarity,
    Entropy,
    Random,
    Learned,
    OracleGain,
    OracleQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArg {
    Gain,
    Quality,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Target {
        match t {
            TargetArg::Gain => Target::Gain,
            TargetArg::Quality => Target::Quality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    TopP,
    Threshold,
    Hardcap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServeModeArg {
    Threshold,
    Hardcap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardArg {
    None,
    Predict,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthModelArg {
    Planted,
    Independent,
}

/// Resources consumed by scorers.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ScorerSource {
    /// Trained head for `--scorer learned`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Frequency table (TSV) for `--scorer rarity`.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BOTTOM_FRACTION)]
    pub bottom_fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GuardOpts {
    #[arg(long, value_enum, default_value_t = GuardArg::None)]
    pub guard: GuardArg,
    #[arg(long, default_value_t = DEFAULT_GUARD_QUANTILE)]
    pub guard_quantile: f64,
    /// Quality-target head for `--guard predict`.
    #[arg(long)]
    pub guard_head: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Comma-separated direction tags, assigned round-robin.
    #[arg(long, value_delimiter = ',', default_value = "en-zh")]
    pub directions: Vec<String>,
    #[arg(long, value_enum, default_value_t = SynthModelArg::Planted)]
    pub model: SynthModelArg,
    /// Planted weights (comma-separated); drawn from N(0, 3²) when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub bias: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub severe_fraction: f64,
    #[arg(long, default_value_t = 40.0)]
    pub q_small_lo: f64,
    #[arg(long, default_value_t = 95.0)]
    pub q_small_hi: f64,
    #[arg(long, default_value_t = 75.0)]
    pub q_large_mean: f64,
    #[arg(long, default_value_t = 12.0)]
    pub q_large_sd: f64,
    /// Dataset path; defaults to `<out-dir>/dataset.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a frequency table for the synthetic vocabulary.
    #[arg(long)]
    pub freq_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = TargetArg::Gain)]
    pub target: TargetArg,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    pub heldout_ratio: f64,
    /// Fit one head per direction (`<out-dir>/head-<direction>.json`).
    #[arg(long)]
    pub per_direction: bool,
    /// Head path; defaults to `<out-dir>/head.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub scorer: ScorerArg,
    #[command(flatten)]
    pub source: ScorerSource,
    #[arg(long, value_delimiter = ',', default_value = "0.3")]
    pub p: Vec<f64>,
    /// Add one entry per direction next to the global one.
    #[arg(long)]
    pub per_direction: bool,
    /// Profile path; defaults to `<out-dir>/profile.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RouteArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub scorer: ScorerArg,
    #[command(flatten)]
    pub source: ScorerSource,
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::TopP)]
    pub mode: ModeArg,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[command(flatten)]
    pub guard: GuardOpts,
    /// Decisions path; defaults to `<out-dir>/decisions.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, required = true)]
    pub scorer: Vec<ScorerArg>,
    #[command(flatten)]
    pub source: ScorerSource,
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, required = true)]
    pub scorer: Vec<ScorerArg>,
    #[command(flatten)]
    pub source: ScorerSource,
    /// Budgets to evaluate; 0 and 1 are always included.
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct RiskArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub scorer: ScorerArg,
    #[command(flatten)]
    pub source: ScorerSource,
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    #[command(flatten)]
    pub guard: GuardOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "ROUTE_LMT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "ROUTE_LMT_PROFILE")]
    pub profile: Option<PathBuf>,
    #[arg(long, env = "ROUTE_LMT_HEAD")]
    pub head: Option<PathBuf>,
    #[arg(long, env = "ROUTE_LMT_P", default_value_t = 0.3)]
    pub p: f64,
    #[arg(long, value_enum, env = "ROUTE_LMT_MODE", default_value_t = ServeModeArg::Threshold)]
    pub mode: ServeModeArg,
    #[arg(long, env = "ROUTE_LMT_WINDOW", default_value_t = 100)]
    pub window: usize,
}

/// Builds scorers, enforcing that scorer resources match the selected kinds.
pub fn build_scorers(
    kinds: &[ScorerArg],
    source: &ScorerSource,
    seed: u64,
    dataset: &Dataset,
) -> Result<Vec<Scorer>> {
    let wants = |k: ScorerArg| kinds.contains(&k);
    if source.head.is_some() && !wants(ScorerArg::Learned) {
        return Err(Error::Usage("--head is only valid with --scorer learned".into()));
    }
    if source.freq.is_some() && !wants(ScorerArg::Rarity) {
        return Err(Error::Usage("--freq is only valid with --scorer rarity".into()));
    }
    let head = match (&source.head, wants(ScorerArg::Learned)) {
        (Some(path), true) => {
            let head = ingest::load_head(path)?;
            if head.dim() != dataset.feature_dim() {
                return Err(Error::Usage(format!(
                    "head dimension {} does not match dataset feature dimension {}",
                    head.dim(),
                    dataset.feature_dim()
                )));
            }
            Some(head)
        }
        (None, true) => return Err(Error::Usage("--scorer learned requires --head".into())),
        _ => None,
    };
    let table = match (&source.freq, wants(ScorerArg::Rarity)) {
        (Some(path), true) => Some(ingest::load_freq_table(path)?),
        (None, true) => return Err(Error::Usage("--scorer rarity requires --freq".into())),
        _ => None,
    };
    Ok(kinds
        .iter()
        .map(|kind| match kind {
            ScorerArg::Length => Scorer::Length,
            ScorerArg::Rarity => Scorer::Rarity {
                table: table.clone().expect("checked above"),
                bottom_fraction: source.bottom_fraction,
            },
            ScorerArg::Entropy => Scorer::Entropy,
            ScorerArg::Random => Scorer::Random { seed },
            ScorerArg::Learned => Scorer::Learned {
                head: head.clone().expect("checked above"),
            },
            ScorerArg::OracleGain => Scorer::OracleGain,
            ScorerArg::OracleQuality => Scorer::OracleQuality,
        })
        .collect())
}

fn single_scorer(kind: ScorerArg, source: &ScorerSource, seed: u64, dataset: &Dataset) -> Result<Scorer> {
    Ok(build_scorers(&[kind], source, seed, dataset)?.remove(0))
}

fn scorer_fingerprint(scorer: &Scorer) -> String {
    match scorer {
        Scorer::Learned { head } => format!("{}:{}", scorer.label(), head.train_fingerprint),
        Scorer::Random { seed } => format!("random:{seed}"),
        other => other.label().to_string(),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            fs::create_dir_all(parent).map_err(|source| Error::Write {
                path: parent.to_path_buf(),
                source,
            })
        }
        _ => Ok(()),
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let directions = args
        .directions
        .iter()
        .map(|d| Direction::new(d.trim()))
        .collect::<route_lmt_core::Result<Vec<_>>>()?;
    let gain_model = match args.model {
        SynthModelArg::Planted => {
            let weights = match &args.weights {
                Some(w) => w.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed ^ 0x5eed_5eed);
                    let normal = Normal::new(0.0, 3.0).expect("valid sd");
                    (0..args.dim).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            GainModel::PlantedLinear {
                weights,
                bias: args.bias,
                noise_sigma: args.noise,
            }
        }
        SynthModelArg::Independent => GainModel::Independent {
            q_small_dist: QualityDist::Uniform {
                lo: args.q_small_lo,
                hi: args.q_small_hi,
            },
            q_large_dist: QualityDist::Normal {
                mean: args.q_large_mean,
                sd: args.q_large_sd,
            },
        },
    };
    let config = SyntheticConfig {
        n: args.n,
        feature_dim: args.weights.as_ref().map_or(args.dim, Vec::len),
        seed: cli.seed,
        gain_model,
        severe_fraction: args.severe_fraction,
        directions,
    };
    let output = synth::generate_synthetic(&config)?;
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("dataset.jsonl"));
    create_parent(&path)?;
    ingest::save_dataset(&output.dataset, &path)?;
    if let Some(freq_path) = &args.freq_out {
        create_parent(freq_path)?;
        ingest::save_freq_table(&synth::synthetic_freq_table(), freq_path)?;
    }
    print_json(&json!({
        "dataset": path,
        "n": output.dataset.len(),
        "feature_dim": output.dataset.feature_dim(),
        "stats": output.stats,
        "clamp_rate": output.stats.clamp_rate(output.dataset.len()),
    }));
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    if dataset.feature_dim() == 0 {
        return Err(Error::Usage(format!("{} has no features", args.data.display())));
    }
    let target = Target::from(args.target);
    if args.per_direction {
        let (train, heldout) = split_dataset(&dataset, args.heldout_ratio, cli.seed)?;
        let heads = fit_per_direction(&train, target, args.lambda)?;
        fs::create_dir_all(&cli.out_dir).map_err(|source| Error::Write {
            path: cli.out_dir.clone(),
            source,
        })?;
        let mut reports = serde_json::Map::new();
        for (direction, head) in &heads {
            let path = cli.out_dir.join(format!("head-{direction}.json"));
            ingest::save_head(head, &path)?;
            let train_dir = train.filter(|r| &r.direction == direction);
            let held_dir = heldout.filter(|r| &r.direction == direction);
            let mut report = if held_dir.is_empty() {
                None
            } else {
                Some(evaluate_head(head, &held_dir)?)
            };
            if let Some(r) = report.as_mut() {
                r.train_mse = Some(mse(head, &train_dir)?);
                r.n_train = train_dir.len();
            }
            reports.insert(
                direction.to_string(),
                json!({ "head": path, "report": report }),
            );
        }
        print_json(&reports);
        return Ok(());
    }
    let (head, report) = train_and_evaluate(&dataset, target, args.lambda, args.heldout_ratio, cli.seed)?;
    if report.n_train <= head.dim() {
        eprintln!(
            "warning: {} training records for {} features; the fit relies on the ridge penalty",
            report.n_train,
            head.dim()
        );
    }
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("head.json"));
    create_parent(&path)?;
    ingest::save_head(&head, &path)?;
    print_json(&json!({ "head": path, "report": report }));
    Ok(())
}

fn cmd_calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    let scorer = single_scorer(args.scorer, &args.source, cli.seed, &dataset)?;
    let scores = scorer.score_all(dataset.records())?;
    let mut profile = CalibrationProfile::new(scorer_fingerprint(&scorer));
    let mut warnings = Vec::new();
    for &p in &args.p {
        let mut scopes = vec![(Scope::Global, scores.clone())];
        if args.per_direction {
            for (direction, idx) in dataset.indices_by_direction() {
                scopes.push((
                    Scope::Direction(direction.clone()),
                    idx.iter().map(|&i| scores[i]).collect(),
                ));
            }
        }
        for (scope, values) in scopes {
            let c = calibrate_threshold(&values, p)?;
            if c.degenerate {
                warnings.push(format!("degenerate calibration for p = {p} in {scope}: all scores equal"));
            }
            profile.upsert(CalibrationEntry {
                p,
                tau: c.tau,
                scope,
                n_calibration: c.n,
            });
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("profile.json"));
    create_parent(&path)?;
    ingest::save_profile(&profile, &path)?;
    print_json(&json!({ "profile": path, "entries": profile.entries }));
    Ok(())
}

/// Guard signal in quality polarity (higher = stronger small-model output).
fn guard_scores(opts: &GuardOpts, dataset: &Dataset) -> Result<Option<Vec<f64>>> {
    match opts.guard {
        GuardArg::None => {
            if opts.guard_head.is_some() {
                return Err(Error::Usage("--guard-head requires --guard predict".into()));
            }
            Ok(None)
        }
        GuardArg::Oracle => dataset
            .records()
            .iter()
            .map(|r| {
                r.q_small.ok_or_else(|| {
                    route_lmt_core::Error::IncompleteLabels { id: r.id.clone() }.into()
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        GuardArg::Predict => {
            let path = opts
                .guard_head
                .as_ref()
                .ok_or_else(|| Error::Usage("--guard predict requires --guard-head".into()))?;
            let head = ingest::load_head(path)?;
            if head.target != Target::Quality {
                return Err(Error::Usage("--guard-head must be a quality-target head".into()));
            }
            dataset
                .records()
                .iter()
                .map(|r| {
                    let features = r.features.as_deref().ok_or_else(|| {
                        route_lmt_core::Error::MissingSignal {
                            id: r.id.clone(),
                            signal: "features",
                        }
                    })?;
                    Ok(head.predict(features)?)
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
    }
}

struct OfflineRouting {
    label: String,
    decisions: Vec<RoutingDecision>,
    backfilled: Option<usize>,
}

fn offline_route(scorer: &Scorer, scores: &[f64], dataset: &Dataset, p: f64, opts: &GuardOpts) -> Result<OfflineRouting> {
    match guard_scores(opts, dataset)? {
        None => {
            let scored: Vec<(&str, f64)> = dataset.ids().into_iter().zip(scores.iter().copied()).collect();
            Ok(OfflineRouting {
                label: scorer.label().to_string(),
                decisions: route_top_p(&scored, p)?,
                backfilled: None,
            })
        }
        Some(guard) => {
            let guarded = route_guarded(dataset.records(), scores, &guard, p, opts.guard_quantile)?;
            let kind = if opts.guard == GuardArg::Oracle { "oracle" } else { "predict" };
            if guarded.backfilled > 0 {
                eprintln!("note: guard backfilled {} large slots", guarded.backfilled);
            }
            Ok(OfflineRouting {
                label: format!("{}+guard-{kind}", scorer.label()),
                decisions: guarded.decisions,
                backfilled: Some(guarded.backfilled),
            })
        }
    }
}

#[derive(Serialize)]
struct DecisionLine<'a> {
    id: &'a str,
    route: &'static str,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'static str>,
}

fn cmd_route(cli: &Cli, args: &RouteArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    let scorer = single_scorer(args.scorer, &args.source, cli.seed, &dataset)?;
    let scores = scorer.score_all(dataset.records())?;
    let mut lines: Vec<(RoutingDecision, Option<&'static str>)> = Vec::new();
    let mut backfilled = None;
    match args.mode {
        ModeArg::TopP => {
            let routed = offline_route(&scorer, &scores, &dataset, args.p, &args.guard)?;
            backfilled = routed.backfilled;
            lines.extend(routed.decisions.into_iter().map(|d| (d, None)));
        }
        ModeArg::Threshold | ModeArg::Hardcap => {
            if args.guard.guard != GuardArg::None {
                return Err(Error::Usage("--guard applies to --mode top-p only".into()));
            }
            let path = args
                .profile
                .as_ref()
                .ok_or_else(|| Error::Usage("--mode threshold|hardcap requires --profile".into()))?;
            let profile = ingest::load_profile(path)?;
            let mode = if args.mode == ModeArg::Hardcap {
                BudgetMode::HardCap
            } else {
                BudgetMode::SoftThreshold
            };
            let mut state = BudgetState::new(args.window, mode)?;
            for (record, &score) in dataset.records().iter().zip(&scores) {
                let entry = profile.lookup(args.p, Some(&record.direction)).ok_or_else(|| {
                    Error::Usage(format!("profile has no threshold for p = {} ({})", args.p, record.direction))
                })?;
                let (outcome, next) = route_stream(&record.id, score, entry.tau, state, args.p);
                state = next;
                let reason = match outcome.reason {
                    StreamReason::AboveThreshold => "above_threshold",
                    StreamReason::BelowThreshold => "below_threshold",
                    StreamReason::BudgetCap => "budget_cap",
                };
                lines.push((outcome.decision, Some(reason)));
            }
        }
    }
    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("decisions.jsonl"));
    create_parent(&path)?;
    let file = fs::File::create(&path).map_err(|source| Error::Write { path: path.clone(), source })?;
    let mut out = BufWriter::new(file);
    for (d, reason) in &lines {
        let line = DecisionLine {
            id: &d.id,
            route: d.route.as_str(),
            score: d.score,
            rank: d.rank,
            reason: *reason,
        };
        serde_json::to_writer(&mut out, &line).expect("serializable");
        out.write_all(b"\n")
            .map_err(|source| Error::Write { path: path.clone(), source })?;
    }
    out.flush().map_err(|source| Error::Write { path: path.clone(), source })?;
    let n_large = lines.iter().filter(|(d, _)| d.route.is_large()).count();
    print_json(&json!({
        "decisions": path,
        "n": lines.len(),
        "n_large": n_large,
        "large_rate": n_large as f64 / lines.len().max(1) as f64,
        "backfilled": backfilled,
    }));
    Ok(())
}

fn config_echo(cli: &Cli) -> serde_json::Value {
    serde_json::to_value(cli).expect("serializable")
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    let scorers = build_scorers(&args.scorer, &args.source, cli.seed, &dataset)?;
    let mut bundle = ReportBundle {
        config: config_echo(cli),
        ..Default::default()
    };
    for scorer in &scorers {
        let scores = scorer.score_all(dataset.records())?;
        let evaluation = evaluate_scores(&dataset, scorer.label(), &scores, args.p)?;
        for d in &evaluation.skipped {
            eprintln!("warning: direction {d} has fewer than two records; skipped");
        }
        bundle.risks.push(LabeledRisk {
            scorer: scorer.label().to_string(),
            histogram: risk_histogram(dataset.records(), &evaluation.decisions)?,
            backfilled: None,
        });
        bundle.evaluations.push(evaluation);
    }
    let files = emit_report(&bundle, &cli.out_dir)?;
    print!("{}", crate::report::metrics_csv(&bundle.evaluations));
    eprintln!("wrote {} and {}", files.metrics.display(), files.json.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    let scorers = build_scorers(&args.scorer, &args.source, cli.seed, &dataset)?;
    let grid = args.p_grid.clone().unwrap_or_else(default_p_grid);
    let mut bundle = ReportBundle {
        config: config_echo(cli),
        ..Default::default()
    };
    for scorer in &scorers {
        let scores = scorer.score_all(dataset.records())?;
        bundle.curves.push(pareto_from_scores(&dataset, scorer.label(), &scores, &grid)?);
    }
    let files = emit_report(&bundle, &cli.out_dir)?;
    print!("{}", crate::report::pareto_csv(&bundle.curves));
    eprintln!("wrote {}", files.pareto.display());
    Ok(())
}

fn cmd_risk(cli: &Cli, args: &RiskArgs) -> Result<()> {
    let dataset = ingest::load_dataset(&args.data)?;
    let scorer = single_scorer(args.scorer, &args.source, cli.seed, &dataset)?;
    let scores = scorer.score_all(dataset.records())?;
    let routed = offline_route(&scorer, &scores, &dataset, args.p, &args.guard)?;
    let bundle = ReportBundle {
        risks: vec![LabeledRisk {
            scorer: routed.label,
            histogram: risk_histogram(dataset.records(), &routed.decisions)?,
            backfilled: routed.backfilled,
        }],
        config: config_echo(cli),
        ..Default::default()
    };
    let files = emit_report(&bundle, &cli.out_dir)?;
    print!("{}", crate::report::risk_csv(&bundle.risks));
    eprintln!("wrote {}", files.risk.display());
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        listen: args.listen,
        head: args.head.as_ref().map(ingest::load_head).transpose()?,
        profile: args.profile.as_ref().map(ingest::load_profile).transpose()?,
        p: args.p,
        mode: match args.mode {
            ServeModeArg::Threshold => BudgetMode::SoftThreshold,
            ServeModeArg::Hardcap => BudgetMode::HardCap,
        },
        window_size: args.window,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Server(e.to_string()))?;
    runtime.block_on(service::serve(config))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Calibrate(args) => cmd_calibrate(cli, args),
        Command::Route(args) => cmd_route(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Sweep(args) => cmd_sweep(cli, args),
        Command::Risk(args) => cmd_risk(cli, args),
        Command::Serve(args) => cmd_serve(args),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
