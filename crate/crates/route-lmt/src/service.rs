//! Online routing endpoint.
//!
//! Shared state is split in two: the calibration (profile plus active budget)
//! is read-mostly and replaced wholesale behind an `Arc`, so a request sees
//! either the old or the new threshold; the budget window and the counters
//! sit behind one mutex and are updated together with each decision.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use route_lmt_core::policy::StreamReason;
use route_lmt_core::{
    calibrate_threshold, floor_count, route_stream, BudgetMode, BudgetState, CalibrationEntry,
    CalibrationProfile, Direction, LinearHead, Scope,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub head: Option<LinearHead>,
    pub profile: Option<CalibrationProfile>,
    pub p: f64,
    pub mode: BudgetMode,
    pub window_size: usize,
}

#[derive(Debug, Clone)]
struct ActiveCalibration {
    profile: CalibrationProfile,
    p: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DirectionCounters {
    pub seen: u64,
    pub large: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ServiceStats {
    pub total_seen: u64,
    pub total_large: u64,
    /// Large-route rate over the last `window_size` decisions.
    pub rolling_large_rate: f64,
    pub window_size: usize,
    pub mode: &'static str,
    pub p: Option<f64>,
    pub windows_completed: u64,
    pub max_large_in_completed_window: usize,
    /// Completed hard-cap windows that exceeded `floor(p * window_size)`.
    pub cap_violations: u64,
    pub per_direction: BTreeMap<String, DirectionCounters>,
    pub uptime_secs: f64,
}

struct Ledger {
    state: BudgetState,
    total_seen: u64,
    total_large: u64,
    recent: VecDeque<bool>,
    per_direction: BTreeMap<String, DirectionCounters>,
    windows_completed: u64,
    max_large_in_completed_window: usize,
    cap_violations: u64,
}

pub struct RoutingService {
    calibration: RwLock<Option<Arc<ActiveCalibration>>>,
    head: Option<LinearHead>,
    ledger: Mutex<Ledger>,
    mode: BudgetMode,
    window_size: usize,
    started: Instant,
}

/// Handler outcome: HTTP status plus JSON body.
pub type Reply = (StatusCode, Value);

fn error_reply(status: StatusCode, message: impl Into<String>) -> Reply {
    (status, json!({ "error": message.into() }))
}

#[derive(Deserialize)]
struct RouteRequest {
    id: String,
    direction: Direction,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct CalibrateRequest {
    scores: Vec<f64>,
    p: f64,
    #[serde(default)]
    scope: Option<Scope>,
}

impl RoutingService {
    pub fn new(config: &ServiceConfig) -> Result<Self> {
        let state = BudgetState::new(config.window_size, config.mode)?;
        if !(config.p > 0.0 && config.p <= 1.0) {
            return Err(Error::Usage(format!("p = {} outside (0, 1]", config.p)));
        }
        if let Some(head) = &config.head {
            head.validate()?;
        }
        let calibration = match &config.profile {
            Some(profile) => {
                profile.validate()?;
                if !profile.entries.iter().any(|e| (e.p - config.p).abs() < 1e-12) {
                    return Err(Error::Usage(format!(
                        "calibration profile has no entry for p = {}",
                        config.p
                    )));
                }
                Some(Arc::new(ActiveCalibration {
                    profile: profile.clone(),
                    p: config.p,
                }))
            }
            None => None,
        };
        Ok(RoutingService {
            calibration: RwLock::new(calibration),
            head: config.head.clone(),
            ledger: Mutex::new(Ledger {
                state,
                total_seen: 0,
                total_large: 0,
                recent: VecDeque::with_capacity(config.window_size),
                per_direction: BTreeMap::new(),
                windows_completed: 0,
                max_large_in_completed_window: 0,
                cap_violations: 0,
            }),
            mode: config.mode,
            window_size: config.window_size,
            started: Instant::now(),
        })
    }

    fn snapshot(&self) -> Option<Arc<ActiveCalibration>> {
        self.calibration.read().expect("calibration lock").clone()
    }

    pub fn is_calibrated(&self) -> bool {
        self.snapshot().is_some()
    }

    pub fn handle_route(&self, body: &[u8]) -> Reply {
        let request: RouteRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return error_reply(StatusCode::BAD_REQUEST, format!("invalid route request: {e}")),
        };
        if request.id.is_empty() {
            return error_reply(StatusCode::BAD_REQUEST, "id must be non-empty");
        }
        let Some(calibration) = self.snapshot() else {
            return error_reply(StatusCode::CONFLICT, "no calibration loaded");
        };
        let Some(entry) = calibration.profile.lookup(calibration.p, Some(&request.direction)) else {
            return error_reply(
                StatusCode::CONFLICT,
                format!("no threshold for p = {} in scope {}", calibration.p, request.direction),
            );
        };
        let tau = entry.tau;
        let score = match (request.score, &request.features, &self.head) {
            (Some(s), _, _) if !s.is_finite() => {
                return error_reply(StatusCode::BAD_REQUEST, "score must be finite")
            }
            (Some(s), _, _) => s,
            (None, Some(features), Some(head)) => match head.routing_score(features) {
                Ok(s) => s,
                Err(e) => return error_reply(StatusCode::BAD_REQUEST, e.to_string()),
            },
            (None, Some(_), None) => {
                return error_reply(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "features given but no head is configured; send a score",
                )
            }
            (None, None, _) => {
                return error_reply(StatusCode::UNPROCESSABLE_ENTITY, "request needs a score or features")
            }
        };

        let reason = {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            let (outcome, next) = route_stream(&request.id, score, tau, ledger.state, calibration.p);
            let large = outcome.decision.route.is_large();
            ledger.state = next;
            ledger.total_seen += 1;
            ledger.total_large += large as u64;
            if ledger.recent.len() == self.window_size {
                ledger.recent.pop_front();
            }
            ledger.recent.push_back(large);
            let counters = ledger
                .per_direction
                .entry(request.direction.to_string())
                .or_default();
            counters.seen += 1;
            counters.large += large as u64;
            if next.window_complete() {
                ledger.windows_completed += 1;
                ledger.max_large_in_completed_window =
                    ledger.max_large_in_completed_window.max(next.routed_large_in_window);
                if self.mode == BudgetMode::HardCap
                    && next.routed_large_in_window > floor_count(calibration.p, self.window_size)
                {
                    ledger.cap_violations += 1;
                }
            }
            outcome.reason
        };
        let route = if reason == StreamReason::AboveThreshold { "large" } else { "small" };
        let reason = match reason {
            StreamReason::AboveThreshold => "above_threshold",
            StreamReason::BelowThreshold => "below_threshold",
            StreamReason::BudgetCap => "budget_cap",
        };
        (
            StatusCode::OK,
            json!({
                "id": request.id,
                "route": route,
                "score": score,
                "tau": tau,
                "mode": self.mode.as_str(),
                "reason": reason,
            }),
        )
    }

    pub fn handle_calibrate(&self, body: &[u8]) -> Reply {
        let request: CalibrateRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => {
                return error_reply(StatusCode::BAD_REQUEST, format!("invalid calibrate request: {e}"))
            }
        };
        if request.scores.is_empty() {
            return error_reply(StatusCode::BAD_REQUEST, "scores must be non-empty");
        }
        let calibration = match calibrate_threshold(&request.scores, request.p) {
            Ok(c) => c,
            Err(e) => return error_reply(StatusCode::BAD_REQUEST, e.to_string()),
        };
        let scope = request.scope.unwrap_or(Scope::Global);
        {
            let mut slot = self.calibration.write().expect("calibration lock");
            let mut profile = slot
                .as_ref()
                .map(|c| c.profile.clone())
                .unwrap_or_else(|| CalibrationProfile::new("service"));
            profile.upsert(CalibrationEntry {
                p: request.p,
                tau: calibration.tau,
                scope: scope.clone(),
                n_calibration: calibration.n,
            });
            *slot = Some(Arc::new(ActiveCalibration {
                profile,
                p: request.p,
            }));
        }
        let mut body = json!({
            "tau": calibration.tau,
            "achieved_fraction": calibration.achieved_fraction,
            "p": request.p,
            "scope": scope.label(),
            "n_calibration": calibration.n,
            "degenerate": calibration.degenerate,
        });
        if calibration.degenerate {
            body["warning"] = json!("degenerate calibration: all scores are equal");
        }
        (StatusCode::OK, body)
    }

    pub fn stats(&self) -> ServiceStats {
        let p = self.snapshot().map(|c| c.p);
        let ledger = self.ledger.lock().expect("ledger lock");
        let rolling = if ledger.recent.is_empty() {
            0.0
        } else {
            ledger.recent.iter().filter(|&&l| l).count() as f64 / ledger.recent.len() as f64
        };
        ServiceStats {
            total_seen: ledger.total_seen,
            total_large: ledger.total_large,
            rolling_large_rate: rolling,
            window_size: self.window_size,
            mode: self.mode.as_str(),
            p,
            windows_completed: ledger.windows_completed,
            max_large_in_completed_window: ledger.max_large_in_completed_window,
            cap_violations: ledger.cap_violations,
            per_direction: ledger.per_direction.clone(),
            uptime_secs: self.started.elapsed().as_secs_f64(),
        }
    }
}

fn to_response((status, body): Reply) -> (StatusCode, Json<Value>) {
    (status, Json(body))
}

async fn route(State(svc): State<Arc<RoutingService>>, body: Bytes) -> (StatusCode, Json<Value>) {
    to_response(svc.handle_route(&body))
}

async fn calibrate(State(svc): State<Arc<RoutingService>>, body: Bytes) -> (StatusCode, Json<Value>) {
    to_response(svc.handle_calibrate(&body))
}

async fn stats(State(svc): State<Arc<RoutingService>>) -> Json<ServiceStats> {
    Json(svc.stats())
}

async fn healthz(State(svc): State<Arc<RoutingService>>) -> (StatusCode, Json<Value>) {
    if svc.is_calibrated() {
        (StatusCode::OK, Json(json!({ "status": "ok" })))
    } else {
        (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "no calibration loaded" })),
        )
    }
}

pub fn router(service: Arc<RoutingService>) -> Router {
    Router::new()
        .route("/v1/route", post(route))
        .route("/v1/calibrate", post(calibrate))
        .route("/v1/stats", get(stats))
        .route("/v1/healthz", get(healthz))
        .with_state(service)
}

/// Serves until the listener fails or the process receives Ctrl-C.
pub async fn serve_on(listener: TcpListener, service: Arc<RoutingService>) -> Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Server(e.to_string()))
}

pub async fn serve(config: ServiceConfig) -> Result<()> {
    let service = Arc::new(RoutingService::new(&config)?);
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|e| Error::Server(format!("cannot bind {}: {e}", config.listen)))?;
    eprintln!("route-lmt listening on {}", config.listen);
    serve_on(listener, service).await
}
