//! HTTP JSON API over one loaded model.
//!
//! Handlers only read the shared model. `POST /admin/reload` swaps it; while
//! a reload is in progress every request is answered with 503.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tmj_core::preprocess::LayoutEntry;
use tmj_core::schema::FeatureSubset;
use tmj_core::FeatureSpec;

use crate::error::{Error, Result};
use crate::model::{FieldError, ModelInfo, PredictError, PredictRequest, PredictResponse, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub strategy: String,
    pub feature_subset: FeatureSubset,
    /// Previous-exam blocks a request must carry.
    pub previous_exams_required: usize,
    /// Raw entry forms, one per input feature.
    pub features: Vec<FeatureSpec>,
    /// Encoded columns after merging, in attribution order.
    pub layout: Vec<LayoutEntry>,
    pub d: usize,
    pub schema_hash: String,
}

impl SchemaDescriptor {
    pub fn of(model: &TrainedModel) -> SchemaDescriptor {
        SchemaDescriptor {
            strategy: model.strategy.to_string(),
            feature_subset: model.feature_subset,
            previous_exams_required: model.previous_exams_required(),
            features: model.encoder.schema.entries.clone(),
            layout: model.encoder.merged_layout.clone(),
            d: model.encoder.d(),
            schema_hash: model.schema_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(status, ErrorBody { error: msg.into(), fields: Vec::new() })
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
    }
}

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        let msg = e.to_string();
        match e {
            PredictError::Fields(fields) => ApiError(StatusCode::BAD_REQUEST, ErrorBody { error: msg, fields }),
            PredictError::LagBlocks { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, msg),
            PredictError::Internal(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

struct Loaded {
    model: TrainedModel,
    schema: SchemaDescriptor,
    info: ModelInfo,
}

impl Loaded {
    fn new(model: TrainedModel) -> Loaded {
        Loaded { schema: SchemaDescriptor::of(&model), info: model.info(), model }
    }
}

enum Slot {
    Empty,
    Reloading,
    Ready(Arc<Loaded>),
}

pub struct AppState {
    slot: RwLock<Slot>,
    model_path: RwLock<Option<PathBuf>>,
    alpha_override: Option<f64>,
}

impl AppState {
    pub fn empty(alpha_override: Option<f64>) -> Arc<AppState> {
        Arc::new(AppState { slot: RwLock::new(Slot::Empty), model_path: RwLock::new(None), alpha_override })
    }

    /// State serving `model`; `path` is what a bodiless reload re-reads.
    pub fn with_model(model: TrainedModel, path: Option<PathBuf>, alpha_override: Option<f64>) -> Result<Arc<AppState>> {
        let model = apply_alpha(model, alpha_override)?;
        Ok(Arc::new(AppState {
            slot: RwLock::new(Slot::Ready(Arc::new(Loaded::new(model)))),
            model_path: RwLock::new(path),
            alpha_override,
        }))
    }

    pub fn load(path: PathBuf, alpha_override: Option<f64>) -> Result<Arc<AppState>> {
        let model = TrainedModel::load(&path)?;
        Self::with_model(model, Some(path), alpha_override)
    }

    fn current(&self) -> Result<Arc<Loaded>, ApiError> {
        match &*self.slot.read().expect("state lock") {
            Slot::Ready(m) => Ok(m.clone()),
            Slot::Empty | Slot::Reloading => Err(ApiError::unavailable()),
        }
    }
}

fn apply_alpha(model: TrainedModel, alpha: Option<f64>) -> Result<TrainedModel> {
    match alpha {
        Some(a) => model.with_alpha(a),
        None => Ok(model),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/predict", post(predict))
        .route("/whatif", post(whatif))
        .route("/model/info", get(info))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))
}

async fn schema(State(state): State<Arc<AppState>>) -> Result<Json<SchemaDescriptor>, ApiError> {
    Ok(Json(state.current()?.schema.clone()))
}

async fn info(State(state): State<Arc<AppState>>) -> Result<Json<ModelInfo>, ApiError> {
    Ok(Json(state.current()?.info.clone()))
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let loaded = state.current()?;
    let req: PredictRequest = parse(&body)?;
    let resp = tokio::task::spawn_blocking(move || loaded.model.predict(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

/// Feature values replacing those of the base request's current exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub values: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub base: PredictRequest,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfItem {
    /// `None` for the baseline, else the override's position.
    pub override_index: Option<usize>,
    pub status: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<PredictResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub results: Vec<WhatIfItem>,
}

fn evaluate_item(model: &TrainedModel, req: &PredictRequest, index: Option<usize>) -> WhatIfItem {
    match model.predict(req) {
        Ok(r) => WhatIfItem { override_index: index, status: 200, response: Some(r), error: None },
        Err(e) => {
            let ApiError(status, body) = e.into();
            WhatIfItem { override_index: index, status: status.as_u16(), response: None, error: Some(body) }
        }
    }
}

async fn whatif(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<WhatIfResponse>, ApiError> {
    let loaded = state.current()?;
    let req: WhatIfRequest = parse(&body)?;
    let results = tokio::task::spawn_blocking(move || {
        let mut out = vec![evaluate_item(&loaded.model, &req.base, None)];
        for (i, o) in req.overrides.iter().enumerate() {
            let mut r = req.base.clone();
            r.values.extend(o.values.iter().map(|(k, v)| (k.clone(), v.clone())));
            out.push(evaluate_item(&loaded.model, &r, Some(i)));
        }
        out
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(WhatIfResponse { results }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReloadRequest {
    /// Model file to load; the current path when unset.
    pub model: Option<PathBuf>,
}

async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ModelInfo>, ApiError> {
    let req: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) { ReloadRequest::default() } else { parse(&body)? };
    let path = req
        .model
        .or_else(|| state.model_path.read().expect("path lock").clone())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "no model path to reload"))?;
    let previous = std::mem::replace(&mut *state.slot.write().expect("state lock"), Slot::Reloading);
    let alpha = state.alpha_override;
    let load_path = path.clone();
    let loaded = tokio::task::spawn_blocking(move || TrainedModel::load(&load_path).and_then(|m| apply_alpha(m, alpha)))
        .await
        .map_err(|e| Error::Internal(e.to_string()));
    let mut slot = state.slot.write().expect("state lock");
    match loaded.and_then(|r| r) {
        Ok(model) => {
            let l = Arc::new(Loaded::new(model));
            let info = l.info.clone();
            *slot = Slot::Ready(l);
            *state.model_path.write().expect("path lock") = Some(path);
            Ok(Json(info))
        }
        Err(e) => {
            *slot = previous;
            let status = match e {
                Error::Io { .. } | Error::Validation(_) => StatusCode::BAD_REQUEST,
                Error::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            Err(ApiError::new(status, format!("reload failed: {e}")))
        }
    }
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
