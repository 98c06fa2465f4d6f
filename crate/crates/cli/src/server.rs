//! Read-only JSON API over a decomposition archive.
//!
//! Intervention state never lives on the server: every predict request
//! carries its own mask.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pppn_core::dataset::DatasetManifest;
use pppn_core::explain::class_heatmaps;
use pppn_core::{intervene, predict, read_archive, Archive, Explanation, MetricReport};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::data::ImageStore;

pub struct AppState {
    pub archive: Archive,
    pub manifest: DatasetManifest,
    pub store: ImageStore,
    pub report: Option<MetricReport>,
}

impl AppState {
    pub fn load(archive_dir: &Path, manifest_path: &Path, report: Option<&Path>) -> anyhow::Result<Self> {
        let archive = read_archive(archive_dir)?;
        let manifest = DatasetManifest::load(manifest_path)?;
        let store = ImageStore::load(&manifest, archive.index.clamp)?;
        let report = match report {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("malformed report {}", p.display()))?)
            }
            None => None,
        };
        Ok(AppState { archive, manifest, store, report })
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, msg.into())
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<AppState>>;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassInfo {
    pub class_id: usize,
    pub label: String,
    pub k: usize,
}

async fn classes(State(s): Shared) -> Json<Vec<ClassInfo>> {
    Json(
        s.archive
            .classes
            .iter()
            .map(|d| ClassInfo {
                class_id: d.class_id,
                label: s.archive.label(d.class_id).unwrap_or("").to_string(),
                k: d.k,
            })
            .collect(),
    )
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PrototypeInfo {
    pub prototype_index: usize,
    pub alpha: f64,
    /// Euclidean norm of the refined prototype.
    pub norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_part: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable: Option<bool>,
}

async fn prototypes(State(s): Shared, UrlPath(class_id): UrlPath<usize>) -> ApiResult<Vec<PrototypeInfo>> {
    let dec = s
        .archive
        .class(class_id)
        .ok_or_else(|| ApiError::not_found(format!("class {class_id} not found")))?;
    let out = dec
        .refined
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, p)| {
            let verdict = s
                .report
                .as_ref()
                .and_then(|r| r.prototypes.iter().find(|v| v.class_id == class_id && v.prototype_index == j));
            PrototypeInfo {
                prototype_index: j,
                alpha: dec.alpha[j],
                norm: p.dot(&p).sqrt(),
                consistent: verdict.and_then(|v| v.consistent),
                consistency_share: verdict.and_then(|v| v.consistency_share),
                best_part: verdict.and_then(|v| v.best_part),
                stable: verdict.and_then(|v| v.stable),
            }
        })
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageInfo {
    pub image_id: String,
    pub class_id: usize,
    pub label: String,
}

async fn images(State(s): Shared) -> Json<Vec<ImageInfo>> {
    Json(
        s.store
            .images()
            .map(|(id, c)| ImageInfo {
                image_id: id.to_string(),
                class_id: c,
                label: s.manifest.label(c).unwrap_or("").to_string(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct HeatmapQuery {
    pub class: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HeatmapGrid {
    pub prototype_index: usize,
    /// `[height, width]` of `values`, row-major.
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HeatmapResponse {
    pub image_id: String,
    pub class_id: usize,
    pub heatmaps: Vec<HeatmapGrid>,
}

async fn heatmaps(
    State(s): Shared,
    UrlPath(image_id): UrlPath<String>,
    Query(q): Query<HeatmapQuery>,
) -> ApiResult<HeatmapResponse> {
    let image = s
        .store
        .get(&image_id)
        .ok_or_else(|| ApiError::not_found(format!("image '{image_id}' not found")))?;
    // Without a filter, show the image's own class.
    let class_id = q.class.unwrap_or(image.class_id);
    let dec = s
        .archive
        .class(class_id)
        .ok_or_else(|| ApiError::not_found(format!("class {class_id} not found")))?;
    let x = s.store.feature_map(image);
    let maps = class_heatmaps(&x, dec).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(HeatmapResponse {
        image_id,
        class_id,
        heatmaps: maps
            .into_iter()
            .map(|h| HeatmapGrid {
                prototype_index: h.prototype_index,
                shape: [h.height, h.width],
                values: h.values,
            })
            .collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub image_id: String,
    /// `C x k` flags, one row per archived class in class id order. Omitted means all on.
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
}

async fn predict_image(State(s): Shared, Json(req): Json<PredictRequest>) -> ApiResult<Explanation> {
    let image = s
        .store
        .get(&req.image_id)
        .ok_or_else(|| ApiError::not_found(format!("image '{}' not found", req.image_id)))?;
    let x = s.store.feature_map(image);
    let e = predict(&x, &s.archive.classes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    match req.mask {
        Some(mask) => intervene(&e, &mask)
            .map(Json)
            .map_err(|e| ApiError::bad_request(e.to_string())),
        None => Ok(Json(e)),
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/classes", get(classes))
        .route("/api/classes/{class_id}/prototypes", get(prototypes))
        .route("/api/images", get(images))
        .route("/api/images/{image_id}/heatmaps", get(heatmaps))
        .route("/api/predict", post(predict_image))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
