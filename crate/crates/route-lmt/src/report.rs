//! CSV and JSON report emission.
//!
//! Every file is rewritten in full with fixed column order, LF line endings
//! and reals printed with four decimals, so identical inputs give
//! byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use route_lmt_core::{ParetoCurve, RiskBucket, RiskHistogram, RouterEvaluation};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "scorer,scope,p,spearman,hitrate,mean_delta,system_quality,n";
pub const PARETO_HEADER: &str = "scorer,p,quality";
pub const RISK_HEADER: &str = "scorer,bucket,count,proportion";

/// Risk histogram tagged with the policy that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledRisk {
    pub scorer: String,
    pub histogram: RiskHistogram,
    /// Guard backfill count, for guarded policies.
    pub backfilled: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub evaluations: Vec<RouterEvaluation>,
    pub curves: Vec<ParetoCurve>,
    pub risks: Vec<LabeledRisk>,
    /// Effective configuration, echoed into `report.json`.
    pub config: Value,
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub pareto: PathBuf,
    pub risk: PathBuf,
    pub json: PathBuf,
}

pub fn fmt4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn metrics_csv(evaluations: &[RouterEvaluation]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for eval in evaluations {
        for row in eval.rows() {
            let spearman = row.spearman.map(fmt4).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                eval.scorer,
                row.scope,
                fmt4(row.p),
                spearman,
                fmt4(row.hitrate_at_p),
                fmt4(row.mean_delta_at_p),
                fmt4(row.system_quality),
                row.n
            );
        }
    }
    out
}

pub fn pareto_csv(curves: &[ParetoCurve]) -> String {
    let mut out = String::from(PARETO_HEADER);
    out.push('\n');
    for curve in curves {
        for point in &curve.points {
            let _ = writeln!(out, "{},{},{}", curve.scorer, fmt4(point.p), fmt4(point.quality));
        }
    }
    out
}

pub fn risk_csv(risks: &[LabeledRisk]) -> String {
    let mut out = String::from(RISK_HEADER);
    out.push('\n');
    for risk in risks {
        for bucket in RiskBucket::ALL {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                risk.scorer,
                bucket.label(),
                risk.histogram.count(bucket),
                fmt4(risk.histogram.proportion(bucket))
            );
        }
    }
    out
}

#[derive(Serialize)]
struct MetricRow<'a> {
    scorer: &'a str,
    scope: &'a str,
    p: f64,
    spearman: Option<f64>,
    hitrate: f64,
    mean_delta: f64,
    system_quality: f64,
    n: usize,
}

#[derive(Serialize)]
struct CurveJson<'a> {
    scorer: &'a str,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct RiskJson<'a> {
    scorer: &'a str,
    n_large: usize,
    empty: bool,
    backfilled: Option<usize>,
    buckets: Vec<BucketJson>,
}

#[derive(Serialize)]
struct BucketJson {
    bucket: &'static str,
    count: usize,
    proportion: f64,
}

#[derive(Serialize)]
struct Metadata {
    averaging: &'static str,
    top_k: &'static str,
    tie_rule: &'static str,
    budget_rounding: &'static str,
    skipped_directions: Vec<String>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: &'a Value,
    metadata: Metadata,
    metrics: Vec<MetricRow<'a>>,
    pareto: Vec<CurveJson<'a>>,
    risk: Vec<RiskJson<'a>>,
}

pub fn report_json(bundle: &ReportBundle) -> String {
    let metrics = bundle
        .evaluations
        .iter()
        .flat_map(|e| {
            e.rows().map(move |row| MetricRow {
                scorer: &e.scorer,
                scope: row.scope.label(),
                p: round4(row.p),
                spearman: row.spearman.map(round4),
                hitrate: round4(row.hitrate_at_p),
                mean_delta: round4(row.mean_delta_at_p),
                system_quality: round4(row.system_quality),
                n: row.n,
            })
        })
        .collect();
    let pareto = bundle
        .curves
        .iter()
        .map(|c| CurveJson {
            scorer: &c.scorer,
            points: c.points.iter().map(|pt| [round4(pt.p), round4(pt.quality)]).collect(),
        })
        .collect();
    let risk = bundle
        .risks
        .iter()
        .map(|r| RiskJson {
            scorer: &r.scorer,
            n_large: r.histogram.n_large,
            empty: r.histogram.empty,
            backfilled: r.backfilled,
            buckets: RiskBucket::ALL
                .iter()
                .map(|&b| BucketJson {
                    bucket: b.label(),
                    count: r.histogram.count(b),
                    proportion: round4(r.histogram.proportion(b)),
                })
                .collect(),
        })
        .collect();
    let mut skipped: Vec<String> = bundle
        .evaluations
        .iter()
        .flat_map(|e| e.skipped.iter().map(|d| format!("{}:{}", e.scorer, d)))
        .collect();
    skipped.sort();
    let doc = ReportJson {
        config: &bundle.config,
        metadata: Metadata {
            averaging: "macro over directions",
            top_k: "direction-local for hitrate and mean_delta; global for pareto",
            tie_rule: "score descending, then id ascending",
            budget_rounding: "k = round(p * n), halves up",
            skipped_directions: skipped,
        },
        metrics,
        pareto,
        risk,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("report is serializable");
    text.push('\n');
    text
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|source| Error::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `metrics.csv`, `pareto.csv`, `risk.csv` and `report.json`.
pub fn emit_report(bundle: &ReportBundle, out_dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    Ok(ReportFiles {
        metrics: write(out_dir.join("metrics.csv"), &metrics_csv(&bundle.evaluations))?,
        pareto: write(out_dir.join("pareto.csv"), &pareto_csv(&bundle.curves))?,
        risk: write(out_dir.join("risk.csv"), &risk_csv(&bundle.risks))?,
        json: write(out_dir.join("report.json"), &report_json(bundle))?,
    })
}
