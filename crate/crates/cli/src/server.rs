//! HTTP backend for the annotation editor: lists the images of a corpus
//! directory, serves their bytes and persists `.ann.json` sidecars.

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use datobs_core::corpus::{parse_annotation, sha256_hex, CorpusError, LabelSet, ANNOTATION_SUFFIX};
use datobs_core::imaging::ImageFormat;
use serde::Serialize;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub corpus_dir: PathBuf,
    pub port: u16,
    pub read_only: bool,
    /// Built editor bundle served at `/`.
    pub ui_dist: Option<PathBuf>,
}

struct AppState {
    root: PathBuf,
    read_only: bool,
    labels: &'static LabelSet,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("no image {id:?}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let kind = match &e {
            CorpusError::Parse(_) => "ParseError",
            CorpusError::UnknownLabel(_) => "UnknownLabel",
            CorpusError::BadGeometry { .. } => "BadGeometry",
            _ => return Self::internal(e.to_string()),
        };
        Self::new(StatusCode::BAD_REQUEST, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub image_path: String,
    pub has_annotation: bool,
    /// `None` when the sidecar exists but does not parse.
    pub box_count: Option<usize>,
    pub image_sha256: String,
}

#[derive(Serialize)]
struct LabelView<'a> {
    class_index: usize,
    ascii_name: &'a str,
    romanization: &'a str,
    unicode: Vec<String>,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut name = image.file_name().unwrap_or_default().to_os_string();
    name.push(ANNOTATION_SUFFIX);
    image.with_file_name(name)
}

/// Reject ids that are empty, absolute, or contain `..`, `.`, backslashes or
/// NUL bytes. Only plain relative paths with `/` separators get through.
fn check_id(id: &str) -> Result<(), ApiError> {
    let bad = |why: &str| Err(ApiError::new(StatusCode::BAD_REQUEST, "BadId", format!("{id:?}: {why}")));
    if id.is_empty() {
        return bad("empty id");
    }
    if id.contains('\\') || id.contains('\0') {
        return bad("invalid character");
    }
    if id.starts_with('/') {
        return bad("absolute path");
    }
    if id.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..") {
        return bad("path traversal");
    }
    if Path::new(id).components().any(|c| !matches!(c, Component::Normal(_))) {
        return bad("path traversal");
    }
    Ok(())
}

impl AppState {
    /// Resolve an image id to a file inside the corpus directory.
    fn resolve(&self, id: &str) -> Result<(PathBuf, ImageFormat), ApiError> {
        check_id(id)?;
        let path = self.root.join(id);
        let format = ImageFormat::from_path(&path).ok_or_else(|| ApiError::not_found(id))?;
        let real = path.canonicalize().map_err(|_| ApiError::not_found(id))?;
        if !real.starts_with(&self.root) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadId", format!("{id:?} leaves the corpus")));
        }
        if !real.is_file() {
            return Err(ApiError::not_found(id));
        }
        Ok((path, format))
    }
}

fn collect_images(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ty = entry.file_type()?;
        if ty.is_dir() {
            collect_images(root, &path, out)?;
        } else if ty.is_file() && ImageFormat::from_path(&path).is_some() {
            out.push(path);
        }
    }
    Ok(())
}

fn image_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).expect("listed under root");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Every PNG/PGM under `root`, recursively, ordered by id.
pub fn list_images(root: &Path, labels: &LabelSet) -> std::io::Result<Vec<ImageEntry>> {
    let mut paths = Vec::new();
    collect_images(root, root, &mut paths)?;
    let mut entries = paths
        .into_iter()
        .map(|path| {
            let sidecar = sidecar_path(&path);
            let has_annotation = sidecar.is_file();
            let box_count = std::fs::read_to_string(&sidecar)
                .ok()
                .and_then(|text| parse_annotation(&text, labels).ok())
                .map(|a| a.boxes.len());
            Ok(ImageEntry {
                id: image_id(root, &path),
                image_path: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                has_annotation,
                box_count: if has_annotation { box_count } else { Some(0) },
                image_sha256: sha256_hex(&std::fs::read(&path)?),
            })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(entries)
}

async fn get_labels(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let views: Vec<LabelView> = state
        .labels
        .entries()
        .iter()
        .map(|e| LabelView {
            class_index: e.class_index,
            ascii_name: &e.ascii_name,
            romanization: &e.romanization,
            unicode: e.unicode_hex(),
        })
        .collect();
    Json(serde_json::to_value(views).expect("labels serialize"))
}

async fn get_images(State(state): State<Arc<AppState>>) -> Result<Json<Vec<ImageEntry>>, ApiError> {
    let st = state.clone();
    let entries = tokio::task::spawn_blocking(move || list_images(&st.root, st.labels))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(entries))
}

async fn get_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let (path, format) = state.resolve(&id)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found(&id))?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], bytes).into_response())
}

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn get_annotation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let (path, _) = state.resolve(&id)?;
    let text = match tokio::fs::read_to_string(sidecar_path(&path)).await {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("{id:?} has no annotation")))
        }
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };
    let ann = parse_annotation(&text, state.labels)
        .map_err(|e| ApiError::internal(format!("stored annotation is invalid: {e}")))?;
    Ok(json_text(ann.to_json()))
}

/// Write `contents` to a temporary file beside `target`, then rename it over
/// `target`.
pub fn write_atomic(target: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = target.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(target).map_err(|e| e.error)?;
    Ok(())
}

async fn put_annotation(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    if state.read_only {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "ReadOnly", "server is read-only"));
    }
    let (path, _) = state.resolve(&id)?;
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", "body is not UTF-8"))?;
    let mut ann = parse_annotation(text, state.labels)?;
    let image = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found(&id))?;
    if !ann.matches_image(&image) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "DigestMismatch",
            format!("image_sha256 does not match {id:?} (expected {})", sha256_hex(&image)),
        ));
    }
    ann.image_path = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let normalized = ann.to_json();
    let target = sidecar_path(&path);
    let bytes = normalized.clone().into_bytes();
    tokio::task::spawn_blocking(move || write_atomic(&target, &bytes))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_text(normalized))
}

pub fn router(config: &ServerConfig) -> std::io::Result<Router> {
    let root = config.corpus_dir.canonicalize()?;
    if !root.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotADirectory,
            format!("{} is not a directory", root.display()),
        ));
    }
    let state = Arc::new(AppState {
        root,
        read_only: config.read_only,
        labels: LabelSet::tifinagh(),
    });
    let api = Router::new()
        .route("/api/labels", get(get_labels))
        .route("/api/images", get(get_images))
        .route("/api/image/{*id}", get(get_image))
        .route("/api/annotation/{*id}", get(get_annotation).put(put_annotation))
        .with_state(state);
    Ok(match &config.ui_dist {
        Some(dist) => api.fallback_service(ServeDir::new(dist)),
        None => api,
    })
}

pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let app = router(&config)?;
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", config.port)).await?;
    eprintln!("serving {} on http://{}", config.corpus_dir.display(), listener.local_addr()?);
    axum::serve(listener, app).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids() {
        assert!(check_id("a.png").is_ok());
        assert!(check_id("dir/sub/a.png").is_ok());
        for bad in ["", "../secret", "a/../b.png", "/etc/passwd", "a//b", "./a.png", "a\\b", "a\0b"] {
            assert!(check_id(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("d/sign1.png")), Path::new("d/sign1.png.ann.json"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
