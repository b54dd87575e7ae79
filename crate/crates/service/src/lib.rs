//! JSON API for the expert review loop: browse low-confidence predictions,
//! submit label corrections, retrain, and read reports and sweeps.
//!
//! Every snapshot-backed response carries the `version` of the snapshot it was
//! read from. Snapshots are replaced whole, so a response never mixes two.

pub mod corrections;
mod state;

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dcm_core::classify::ModelKind;
use dcm_core::{BreakdownLevel, ClassCode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use corrections::{Correction, CorrectionLog};
pub use state::{AppState, PredictionRow, RetrainGuard, ServiceConfig, ServiceError, Snapshot, SnapshotSpec, SweepSettings};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type Params = Query<BTreeMap<String, String>>;
type ApiResult = Result<Json<Value>, ApiError>;

fn level_param(p: &BTreeMap<String, String>) -> Result<BreakdownLevel, ApiError> {
    let raw = p.get("level").ok_or_else(|| ApiError::bad("MissingParameter", "level is required"))?;
    raw.parse().map_err(|_| ApiError::bad("InvalidParameter", format!("unknown level {raw:?}")))
}

fn model_param(p: &BTreeMap<String, String>) -> Result<ModelKind, ApiError> {
    match p.get("model") {
        None => Ok(ModelKind::Nb),
        Some(raw) => raw
            .parse()
            .map_err(|_| ApiError::bad("InvalidParameter", format!("unknown model {raw:?}"))),
    }
}

fn num_param<T: std::str::FromStr>(p: &BTreeMap<String, String>, name: &str, default: T) -> Result<T, ApiError> {
    match p.get(name) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| ApiError::bad("InvalidParameter", format!("{name} must be a number, got {raw:?}"))),
    }
}

fn snapshot_for(state: &AppState, level: BreakdownLevel, kind: ModelKind) -> Result<std::sync::Arc<Snapshot>, ApiError> {
    state
        .snapshot(level, kind)
        .ok_or_else(|| ApiError::not_found("NoModel", format!("no {kind} model trained for {level}")))
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.0.static_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/hierarchy", get(hierarchy))
        .route("/report", get(report))
        .route("/sweep", get(sweep))
        .route("/predictions", get(predictions))
        .route("/corrections", get(list_corrections).post(submit_correction))
        .route("/retrain", post(retrain));
    let app = Router::new().nest("/api", api).with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until the listener fails.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let snaps: Vec<Value> = state
        .snapshots()
        .iter()
        .map(|s| {
            json!({
                "level": s.spec.level,
                "model": s.kind(),
                "version": s.version,
                "v": s.spec.v,
            })
        })
        .collect();
    Json(json!({
        "status": "ok",
        "records": state.dataset().len(),
        "snapshots": snaps,
    }))
}

async fn hierarchy(State(state): State<AppState>, Query(p): Params) -> ApiResult {
    let level = level_param(&p)?;
    let h = state
        .hierarchy(level)
        .ok_or_else(|| ApiError::not_found("UnknownLevel", format!("no hierarchy loaded for {level}")))?;
    let codes: Vec<Value> = h
        .codes()
        .map(|c| {
            json!({
                "code": c,
                "label": h.label(c),
                "parent": c.parent(),
                "depth": c.len(),
            })
        })
        .collect();
    let mut retained: Vec<ClassCode> = state
        .snapshots()
        .iter()
        .filter(|s| s.spec.level == level)
        .flat_map(|s| s.mapping.retained_classes().copied().collect::<Vec<_>>())
        .collect();
    retained.sort();
    retained.dedup();
    Ok(Json(json!({"level": level, "codes": codes, "retained": retained})))
}

async fn report(State(state): State<AppState>, Query(p): Params) -> ApiResult {
    let level = level_param(&p)?;
    let snap = snapshot_for(&state, level, model_param(&p)?)?;
    let rep = match p.get("mode").map(|m| m.to_ascii_lowercase()).as_deref() {
        None | Some("dynamic") => &snap.dynamic,
        Some("flat") => &snap.flat,
        Some(other) => return Err(ApiError::bad("InvalidParameter", format!("unknown mode {other:?}"))),
    };
    Ok(Json(json!({"version": snap.version, "v": snap.spec.v, "report": rep})))
}

async fn sweep(State(state): State<AppState>, Query(p): Params) -> ApiResult {
    let level = level_param(&p)?;
    let snap = snapshot_for(&state, level, model_param(&p)?)?;
    let points = snap
        .sweep
        .as_ref()
        .ok_or_else(|| ApiError::not_found("NoSweep", "the service was started without a sweep"))?;
    let settings = state.0.sweep.as_ref();
    Ok(Json(json!({
        "version": snap.version,
        "t": settings.map(|s| s.t),
        "epsilon": settings.map(|s| s.epsilon),
        "selected_v": snap.selected_v,
        "points": points,
    })))
}

async fn predictions(State(state): State<AppState>, Query(p): Params) -> ApiResult {
    let level = level_param(&p)?;
    let snap = snapshot_for(&state, level, model_param(&p)?)?;
    let max_conf: f64 = num_param(&p, "max_confidence", 1.0)?;
    let limit: usize = num_param(&p, "limit", 50)?;
    let offset: usize = num_param(&p, "offset", 0)?;
    let h = state.hierarchy(level);
    let active = corrections::active(&state.corrections().into_iter().map(|(c, _)| c).collect::<Vec<_>>());

    let matching: Vec<&PredictionRow> = snap.predictions.iter().filter(|r| r.confidence <= max_conf).collect();
    let items: Vec<Value> = matching
        .iter()
        .skip(offset)
        .take(limit)
        .map(|r| {
            let record = &state.dataset().records()[r.index];
            let path: Vec<Value> = r
                .predicted
                .path()
                .iter()
                .map(|c| json!({"code": c, "label": h.and_then(|h| h.label(c))}))
                .collect();
            json!({
                "record_key": r.record_key,
                "description": record.description,
                "predicted": r.predicted,
                "confidence": r.confidence,
                "model_id": r.model_id,
                "truth": r.truth,
                "path": path,
                "correction": active.get(&(r.record_key.clone(), level)).map(|c| c.corrected_code),
            })
        })
        .collect();
    Ok(Json(json!({
        "version": snap.version,
        "total": matching.len(),
        "offset": offset,
        "limit": limit,
        "items": items,
    })))
}

#[derive(Debug, Deserialize)]
struct CorrectionRequest {
    record: String,
    level: String,
    corrected_code: String,
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    timestamp: Option<u64>,
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b).map_err(|e| ApiError::bad("InvalidBody", e.body_text()))
}

async fn submit_correction(
    State(state): State<AppState>,
    body: Result<Json<CorrectionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req = json_body(body)?;
    let level: BreakdownLevel = req
        .level
        .parse()
        .map_err(|_| ApiError::bad("InvalidParameter", format!("unknown level {:?}", req.level)))?;
    let h = state
        .hierarchy(level)
        .ok_or_else(|| ApiError::not_found("UnknownLevel", format!("no hierarchy loaded for {level}")))?;
    if state.dataset().find(&req.record).is_none() {
        return Err(ApiError::not_found("UnknownRecord", format!("no record {:?}", req.record)));
    }
    let code = ClassCode::parse(&req.corrected_code)
        .ok()
        .filter(|c| h.contains(c))
        .ok_or_else(|| ApiError::bad("InvalidCode", format!("{:?} is not a {level} class", req.corrected_code)))?;
    let timestamp = req.timestamp.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    });
    let logged = state
        .append_correction(Correction {
            seq: 0,
            record: req.record,
            level,
            corrected_code: code,
            annotator: req.annotator.unwrap_or_default(),
            timestamp,
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "LogWrite", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({"seq": logged.seq, "correction": logged}))))
}

async fn list_corrections(State(state): State<AppState>, Query(p): Params) -> Json<Value> {
    let items: Vec<Value> = state
        .corrections()
        .into_iter()
        .filter(|(c, _)| p.get("record").is_none_or(|r| &c.record == r))
        .map(|(c, active)| json!({"correction": c, "active": active}))
        .collect();
    Json(json!({"items": items}))
}

#[derive(Debug, Deserialize)]
struct RetrainRequest {
    level: String,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    v: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RetrainSummary {
    level: BreakdownLevel,
    model: ModelKind,
    v: u64,
    previous_version: u64,
    version: u64,
    before_macro_f1: f64,
    after_macro_f1: f64,
    delta: f64,
    corrections_applied: usize,
}

async fn retrain(State(state): State<AppState>, body: Result<Json<RetrainRequest>, JsonRejection>) -> ApiResult {
    let req = json_body(body)?;
    let mut p = BTreeMap::from([("level".to_string(), req.level)]);
    if let Some(m) = req.model {
        p.insert("model".into(), m);
    }
    let level = level_param(&p)?;
    let kind = model_param(&p)?;
    let previous = snapshot_for(&state, level, kind)?;
    let guard = state
        .try_begin_retrain()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "Busy", "a retrain is already running"))?;
    let mut spec = previous.spec.clone();
    if let Some(v) = req.v {
        spec.v = v;
    }
    let worker = state.clone();
    let built = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let snap = worker.build_snapshot(spec)?;
        worker.install(snap);
        Ok::<_, ServiceError>(worker.snapshot(level, kind).expect("just installed"))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RetrainPanicked", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "PipelineError", e.to_string()))?;
    let summary = RetrainSummary {
        level,
        model: kind,
        v: built.spec.v,
        previous_version: previous.version,
        version: built.version,
        before_macro_f1: previous.dynamic.macro_avg.f1,
        after_macro_f1: built.dynamic.macro_avg.f1,
        delta: built.dynamic.macro_avg.f1 - previous.dynamic.macro_avg.f1,
        corrections_applied: built.corrections_applied,
    };
    Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
}
