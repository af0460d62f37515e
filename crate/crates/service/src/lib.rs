//! Read-only HTTP API over one immutable model snapshot.
//!
//! The snapshot (panel, score model, regression model) is loaded once and
//! never changes; every response is a pure function of the snapshot and the
//! request, serialized as canonical JSON.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use aqilens_core::aqi_pca::{explained_variance, AqiPcaModel};
use aqilens_core::canonical::to_canonical_json;
use aqilens_core::ingest::{read_panel_file, County, IngestError, Panel};
use aqilens_core::model::{ModelError, RegressionModel};
use aqilens_core::pipeline::Metrics;
use aqilens_core::scenario::{run_scenario, sweep, Override, ScenarioError, ScenarioRequest};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub const API_SCHEMA: &str = "aqilens.api/1";

/// Grid size used by `/api/sweep` when the request names no grid.
pub const DEFAULT_SWEEP_POINTS: usize = 21;

/// Upper end of the default sweep grid, as a multiple of the training max.
pub const DEFAULT_SWEEP_SPAN: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("score model: {0}")]
    Aqi(#[from] aqilens_core::aqi_pca::AqiError),
    #[error("metrics file: {0}")]
    Metrics(serde_json::Error),
    #[error("panel is empty; refusing to serve")]
    EmptyPanel,
    #[error("model feature `{0}` is not a panel column")]
    FeatureNotInPanel(String),
}

fn read(path: &Path) -> Result<Vec<u8>, ServiceError> {
    fs::read(path).map_err(|source| ServiceError::Io { path: path.display().to_string(), source })
}

/// Hex SHA-256 of the persisted model bytes.
pub fn fingerprint(model_bytes: &[u8]) -> String {
    Sha256::digest(model_bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything the service answers from.
#[derive(Debug)]
pub struct Snapshot {
    pub panel: Panel,
    pub model: RegressionModel,
    pub aqi_model: Option<AqiPcaModel>,
    pub metrics: Option<Metrics>,
    pub fingerprint: String,
}

impl Snapshot {
    pub fn new(
        panel: Panel,
        model_bytes: &[u8],
        aqi_model: Option<AqiPcaModel>,
        metrics: Option<Metrics>,
    ) -> Result<Self, ServiceError> {
        if panel.is_empty() {
            return Err(ServiceError::EmptyPanel);
        }
        let text = String::from_utf8_lossy(model_bytes);
        let model = RegressionModel::from_json(&text)?;
        for name in &model.feature_spec.names {
            if aqilens_core::ingest::covariate_domain(name).is_none() {
                return Err(ServiceError::FeatureNotInPanel(name.clone()));
            }
        }
        if let Some(a) = &aqi_model {
            a.check()?;
        }
        Ok(Snapshot { panel, model, aqi_model, metrics, fingerprint: fingerprint(model_bytes) })
    }

    pub fn load(paths: &SnapshotPaths) -> Result<Self, ServiceError> {
        let panel = read_panel_file(&paths.panel)?;
        let model_bytes = read(&paths.model)?;
        let aqi_model = match &paths.aqi_model {
            Some(p) => Some(AqiPcaModel::from_json(&String::from_utf8_lossy(&read(p)?))?),
            None => None,
        };
        let metrics = match &paths.metrics {
            Some(p) => Some(serde_json::from_slice(&read(p)?).map_err(ServiceError::Metrics)?),
            None => None,
        };
        Snapshot::new(panel, &model_bytes, aqi_model, metrics)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPaths {
    pub panel: PathBuf,
    pub model: PathBuf,
    pub aqi_model: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl SnapshotPaths {
    /// Standard artifact names inside a pipeline output directory. Optional
    /// files are used only when present.
    pub fn in_dir(dir: &Path) -> Self {
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        SnapshotPaths {
            panel: dir.join("panel.csv"),
            model: dir.join("model.json"),
            aqi_model: optional("aqi_model.json"),
            metrics: optional("metrics.json"),
        }
    }
}

/// Shared handler state. Requests arriving before the snapshot is
/// installed receive 503.
#[derive(Clone, Default)]
pub struct AppState {
    snapshot: Arc<OnceLock<Arc<Snapshot>>>,
}

impl AppState {
    pub fn empty() -> Self {
        AppState::default()
    }

    pub fn ready(snapshot: Snapshot) -> Self {
        let state = AppState::empty();
        state.install(snapshot);
        state
    }

    /// Installs the snapshot. Returns false if one was already installed.
    pub fn install(&self, snapshot: Snapshot) -> bool {
        self.snapshot.set(Arc::new(snapshot)).is_ok()
    }

    fn get(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot.get().cloned().ok_or(ApiError::NotReady)
    }
}

/// Request-level failure, rendered as `{"error":{"code","message"}}`.
#[derive(Debug)]
pub enum ApiError {
    NotReady,
    BadRequest(String),
    UnknownModel(String),
    Scenario(ScenarioError),
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, String) {
        match self {
            ApiError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "service.NotReady".into()),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "service.BadRequest".into()),
            ApiError::UnknownModel(_) => (StatusCode::NOT_FOUND, "service.UnknownModel".into()),
            ApiError::Scenario(e) => {
                let status = match e {
                    ScenarioError::UnknownCounty { .. } => StatusCode::NOT_FOUND,
                    ScenarioError::UnknownCovariate(_)
                    | ScenarioError::BoundViolation { .. }
                    | ScenarioError::EmptyGrid => StatusCode::UNPROCESSABLE_ENTITY,
                    ScenarioError::Model(ModelError::MissingCovariate(_)) => StatusCode::UNPROCESSABLE_ENTITY,
                    ScenarioError::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, format!("scenario.{}", e.code()))
            }
        }
    }

    fn message(&self) -> String {
        match self {
            ApiError::NotReady => "model snapshot is still loading".into(),
            ApiError::BadRequest(m) => m.clone(),
            ApiError::UnknownModel(id) => format!("model `{id}` is not served here"),
            ApiError::Scenario(e) => e.to_string(),
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        ApiError::Scenario(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Serialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

fn json_response<T: Serialize + ?Sized>(status: StatusCode, body: &T) -> Response {
    let mut resp = (status, to_canonical_json(body)).into_response();
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    resp
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        json_response(status, &ErrorBody { error: ErrorDetail { code, message: self.message() } })
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize + ?Sized>(body: &T) -> ApiResult {
    Ok(json_response(StatusCode::OK, body))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

fn check_model_id(snap: &Snapshot, model_id: Option<&str>) -> Result<(), ApiError> {
    match model_id {
        Some(id) if id != snap.fingerprint => Err(ApiError::UnknownModel(id.to_string())),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    fingerprint: &'a str,
    schema_version: &'static str,
}

async fn healthz(State(state): State<AppState>) -> ApiResult {
    let snap = state.get()?;
    ok(&Health { status: "ok", fingerprint: &snap.fingerprint, schema_version: API_SCHEMA })
}

#[derive(Serialize)]
struct CountyEntry {
    county: County,
    year: i32,
    covariates: BTreeMap<String, f64>,
    aqi_score: Option<f64>,
}

async fn counties(State(state): State<AppState>) -> ApiResult {
    let snap = state.get()?;
    let entries: Vec<CountyEntry> = snap
        .panel
        .latest_per_county()
        .into_iter()
        .map(|r| CountyEntry {
            county: r.county.clone(),
            year: r.year,
            covariates: snap
                .model
                .feature_spec
                .names
                .iter()
                .filter_map(|n| r.covariate(n).map(|v| (n.clone(), v)))
                .collect(),
            aqi_score: r.aqi_score,
        })
        .collect();
    ok(&entries)
}

async fn scenario(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let snap = state.get()?;
    let request: ScenarioRequest = parse_body(&body)?;
    check_model_id(&snap, request.model_id.as_deref())?;
    ok(&run_scenario(&request, &snap.panel, &snap.model)?)
}

/// Body of `POST /api/sweep`: a scenario template plus the covariate to
/// vary. Without `grid`, `points` values run evenly from 0 to three times
/// the training maximum.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub county: County,
    pub base_year: i32,
    #[serde(default)]
    pub overrides: BTreeMap<String, Override>,
    #[serde(default)]
    pub model_id: Option<String>,
    pub covariate: String,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub points: Option<usize>,
}

#[derive(Serialize)]
struct HistoryPoint {
    year: i32,
    aqi_score: f64,
}

#[derive(Serialize)]
struct SweepResponse {
    county: County,
    base_year: i32,
    covariate: String,
    grid: Vec<f64>,
    results: Vec<aqilens_core::scenario::ScenarioResult>,
    /// Observed scores of the county, for overlaying on the sweep.
    history: Vec<HistoryPoint>,
}

fn default_grid(model: &RegressionModel, covariate: &str, points: usize) -> Result<Vec<f64>, ApiError> {
    let (_, max) = model
        .training_range(covariate)
        .ok_or_else(|| ApiError::Scenario(ScenarioError::UnknownCovariate(covariate.to_string())))?;
    let top = DEFAULT_SWEEP_SPAN * max;
    Ok(match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect(),
    })
}

async fn sweep_handler(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let snap = state.get()?;
    let req: SweepRequest = parse_body(&body)?;
    check_model_id(&snap, req.model_id.as_deref())?;
    let grid = match req.grid {
        Some(g) => g,
        None => default_grid(&snap.model, &req.covariate, req.points.unwrap_or(DEFAULT_SWEEP_POINTS))?,
    };
    let template = ScenarioRequest {
        county: req.county.clone(),
        base_year: req.base_year,
        overrides: req.overrides,
        model_id: req.model_id,
    };
    let results = sweep(&template, &req.covariate, &grid, &snap.panel, &snap.model)?;
    let history = snap
        .panel
        .rows()
        .iter()
        .filter(|r| r.county == req.county)
        .filter_map(|r| r.aqi_score.map(|s| HistoryPoint { year: r.year, aqi_score: s }))
        .collect();
    ok(&SweepResponse { county: req.county, base_year: req.base_year, covariate: req.covariate, grid, results, history })
}

#[derive(Serialize)]
struct Range {
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    schema_version: &'a str,
    fingerprint: &'a str,
    method: aqilens_core::model::FitMethod,
    features: &'a [String],
    include_bias: bool,
    /// Bias first when enabled, then one weight per standardized feature.
    weights: &'a [f64],
    feature_means: &'a [f64],
    feature_stds: &'a [f64],
    training_ranges: BTreeMap<&'a str, Range>,
    converged_at: Option<usize>,
    iterations: usize,
    metrics: Option<&'a Metrics>,
    explained_variance: Option<Vec<f64>>,
}

async fn model_info(State(state): State<AppState>) -> ApiResult {
    let snap = state.get()?;
    let m = &snap.model;
    let training_ranges = m
        .feature_spec
        .names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.as_str(), Range { min: m.scaling.mins[k], max: m.scaling.maxs[k] }))
        .collect();
    ok(&ModelInfo {
        schema_version: &m.schema_version,
        fingerprint: &snap.fingerprint,
        method: m.method,
        features: &m.feature_spec.names,
        include_bias: m.feature_spec.include_bias,
        weights: &m.weights,
        feature_means: &m.scaling.means,
        feature_stds: &m.scaling.stds,
        training_ranges,
        converged_at: m.converged_at,
        iterations: m.history.iterations,
        metrics: snap.metrics.as_ref(),
        explained_variance: snap.aqi_model.as_ref().and_then(|a| explained_variance(a).ok()),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouterOptions {
    /// `*` for any origin, otherwise one exact origin.
    pub cors_origin: Option<String>,
    /// Directory of static assets served for non-API paths.
    pub static_dir: Option<PathBuf>,
}

pub fn router(state: AppState, opts: &RouterOptions) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/counties", get(counties))
        .route("/api/model", get(model_info))
        .route("/api/scenario", post(scenario))
        .route("/api/sweep", post(sweep_handler))
        .with_state(state);
    if let Some(dir) = &opts.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if let Some(origin) = &opts.cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => AllowOrigin::any(),
            }
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(snapshot: Snapshot, addr: SocketAddr, opts: &RouterOptions) -> std::io::Result<()> {
    let app = router(AppState::ready(snapshot), opts);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
