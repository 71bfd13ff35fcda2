//! Local HTTP service over loaded viz exports.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nested_fusion::eval::{region_separation, RegionComparison, RegionSelection, VizExport};
use nested_fusion::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::{CliError, ServeArgs};

/// Loaded exports keyed by id (the file stem). Immutable once serving.
#[derive(Debug, Default)]
pub struct Exports {
    exports: BTreeMap<String, VizExport>,
}

impl Exports {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, export: VizExport) -> Result<(), Error> {
        let id = id.into();
        if self.exports.contains_key(&id) {
            return Err(Error::Validation(format!("two exports share the id '{id}'")));
        }
        self.exports.insert(id, export);
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<(), Error> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("{}: export file name is not valid UTF-8", path.display())))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let export = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        self.insert(id, export)
    }

    /// Loads export files, and every `*.json` file directly inside directories
    /// (config echoes excluded).
    pub fn load(paths: &[PathBuf]) -> Result<Self, Error> {
        let mut out = Self::new();
        for p in paths {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(p)
                    .map_err(|e| Error::io(p, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| {
                        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                        name.ends_with(".json") && !name.ends_with(".config.json")
                    })
                    .collect();
                files.sort();
                for f in files {
                    out.load_file(&f)?;
                }
            } else {
                out.load_file(p)?;
            }
        }
        if out.exports.is_empty() {
            return Err(Error::Validation("no exports to serve".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub id: String,
    pub model: String,
    pub dataset: String,
    pub latent_dim: usize,
    pub points: usize,
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRequest {
    pub export_id: String,
    pub region_a: RegionSelection,
    pub region_b: RegionSelection,
    /// Defaults to the export's separation settings.
    pub projections: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ApiErrorBody { error: self.1 })).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Validation(_) | Error::Shape(_) | Error::UndefinedMetric(_) | Error::Unsupported(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::InvalidReference(_) => StatusCode::NOT_FOUND,
            Error::Config(_) | Error::Format(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

type Shared = Arc<Exports>;

fn lookup<'a>(s: &'a Exports, id: &str) -> Result<&'a VizExport, ApiError> {
    s.exports
        .get(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no export with id '{id}'")))
}

async fn list_exports(State(s): State<Shared>) -> Json<Vec<ExportSummary>> {
    Json(
        s.exports
            .iter()
            .map(|(id, e)| ExportSummary {
                id: id.clone(),
                model: e.model.clone(),
                dataset: e.dataset.clone(),
                latent_dim: e.latent_dim,
                points: e.latent_points.values.len(),
                regions: e.regions.iter().map(|r| r.label.clone()).collect(),
            })
            .collect(),
    )
}

async fn get_export(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<VizExport>, ApiError> {
    Ok(Json(lookup(&s, &id)?.clone()))
}

async fn separation(
    State(s): State<Shared>,
    body: Result<Json<SeparationRequest>, JsonRejection>,
) -> Result<Json<RegionComparison>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(e.status(), e.body_text()))?;
    let export = lookup(&s, &req.export_id)?;
    let projections = req.projections.unwrap_or(export.separation.projections);
    let seed = req.seed.unwrap_or(export.separation.seed);
    if projections == 0 {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "projections must be positive".into()));
    }
    let points = export.region_points();
    // Distances are CPU-bound; keep them off the async workers.
    let result = tokio::task::spawn_blocking(move || {
        region_separation(&points, &req.region_a, &req.region_b, projections, seed)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result))
}

async fn unknown_api() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such endpoint".into())
}

/// The API routes, plus static viewer assets when a directory is given.
pub fn router(exports: Exports, assets: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/exports", get(list_exports))
        .route("/api/export/{id}", get(get_export))
        .route("/api/separation", post(separation))
        .route("/api/{*rest}", get(unknown_api).post(unknown_api))
        .with_state(Arc::new(exports));
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let exports = Exports::load(&a.exports)?;
    if let Some(dir) = &a.assets {
        if !dir.is_dir() {
            return Err(Error::Validation(format!("{} is not a directory", dir.display())).into());
        }
    }
    let ids: Vec<String> = exports.exports.keys().cloned().collect();
    let app = router(exports, a.assets.as_deref());
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::usage(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
        println!("serving {} export(s) [{}] on http://{addr}", ids.len(), ids.join(", "));
        axum::serve(listener, app).await.map_err(|e| Error::io(addr.to_string(), e))
    })?;
    Ok(())
}
