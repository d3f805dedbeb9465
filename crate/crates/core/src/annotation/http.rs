use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{human_scores, AnnotationError, AnnotationService, AnnotationTask, BatchRequest, ExportRow};
use crate::stats::HumanScore;

type Shared = Arc<AnnotationService>;

impl IntoResponse for AnnotationError {
    fn into_response(self) -> Response {
        let status = match &self {
            AnnotationError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AnnotationError::NotFound(_) => StatusCode::NOT_FOUND,
            AnnotationError::Duplicate { .. } | AnnotationError::Complete(_) | AnnotationError::BatchExists(_) => {
                StatusCode::CONFLICT
            }
            AnnotationError::Shortfall(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotationError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "code": self.code(), "message": self.to_string() }))).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, AnnotationError> {
    payload.map(|Json(v)| v).map_err(|e| AnnotationError::BadRequest(e.body_text()))
}

async fn create_batch(
    State(svc): State<Shared>,
    payload: Result<Json<BatchRequest>, JsonRejection>,
) -> Result<impl IntoResponse, AnnotationError> {
    let summary = svc.create_batch(body(payload)?)?;
    Ok((StatusCode::CREATED, Json(summary)))
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    worker: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextTaskResponse {
    pub task: Option<AnnotationTask>,
    /// Ratings this worker has submitted so far.
    pub rated: usize,
}

async fn next_task(
    State(svc): State<Shared>,
    Query(q): Query<NextQuery>,
) -> Result<Json<NextTaskResponse>, AnnotationError> {
    let worker = q.worker.unwrap_or_default();
    let task = svc.next_task(&worker)?;
    let rated = svc.worker_rating_count(&worker);
    Ok(Json(NextTaskResponse { task, rated }))
}

#[derive(Debug, Deserialize)]
struct RatingRequest {
    task_id: String,
    worker_id: String,
    score: i64,
}

async fn submit_rating(
    State(svc): State<Shared>,
    payload: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<impl IntoResponse, AnnotationError> {
    let req = body(payload)?;
    let score = u8::try_from(req.score)
        .ok()
        .filter(|s| (1..=5).contains(s))
        .ok_or_else(|| AnnotationError::BadRequest(format!("score {} outside 1..=5", req.score)))?;
    Ok(Json(svc.submit_rating(&req.task_id, &req.worker_id, score)?))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    batch: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub batch_id: String,
    pub rows: Vec<ExportRow>,
    /// Complete tasks only.
    pub human_scores: Vec<HumanScore>,
}

async fn export(
    State(svc): State<Shared>,
    Query(q): Query<ExportQuery>,
) -> Result<Json<ExportResponse>, AnnotationError> {
    let rows = svc.export(&q.batch)?;
    Ok(Json(ExportResponse { batch_id: q.batch, human_scores: human_scores(&rows, false), rows }))
}

async fn image(State(svc): State<Shared>, Path(image_id): Path<String>) -> Result<Response, AnnotationError> {
    let bytes = svc.image_bytes(&image_id)?;
    let mime = match svc.catalog().find_image(&image_id).and_then(|i| i.path.as_ref()).and_then(|p| p.extension()) {
        Some(e) if e.eq_ignore_ascii_case("png") => "image/png",
        Some(e) if e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg") => "image/jpeg",
        Some(e) if e.eq_ignore_ascii_case("webp") => "image/webp",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/batches", post(create_batch))
        .route("/tasks/next", get(next_task))
        .route("/ratings", post(submit_rating))
        .route("/export", get(export))
        .route("/images/{image_id}", get(image))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<AnnotationService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::tests::catalog;
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use serde_json::Value;
    use tower::ServiceExt;

    async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header(header::CONTENT_TYPE, "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    #[tokio::test]
    async fn full_round_trip() {
        let app = router(Arc::new(AnnotationService::in_memory(catalog(2, 1))));
        let req = json!({"batch_id": "b1", "model": "sd2", "prompts_per_cell": 1, "images_per_prompt": 1});
        let (status, summary) = call(&app, "POST", "/batches", Some(req.clone())).await;
        assert_eq!(status, StatusCode::CREATED);
        assert_eq!(summary["tasks"], 6);
        let (status, err) = call(&app, "POST", "/batches", Some(req)).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(err["code"], "batch_exists");

        let (_, next) = call(&app, "GET", "/tasks/next?worker=w1", None).await;
        let task_id = next["task"]["task_id"].as_str().unwrap().to_owned();
        let rating = |w: &str, s: i64| json!({"task_id": task_id, "worker_id": w, "score": s});
        let (status, err) = call(&app, "POST", "/ratings", Some(rating("w1", 6))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(err["code"], "bad_request");
        let (status, ack) = call(&app, "POST", "/ratings", Some(rating("w1", 5))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["ratings"], 1);
        let (status, err) = call(&app, "POST", "/ratings", Some(rating("w1", 4))).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(err["code"], "duplicate_rating");
        call(&app, "POST", "/ratings", Some(rating("w2", 4))).await;
        let (_, ack) = call(&app, "POST", "/ratings", Some(rating("w3", 3))).await;
        assert_eq!(ack["complete"], true);

        let (_, next) = call(&app, "GET", "/tasks/next?worker=w1", None).await;
        assert_eq!(next["rated"], 1);

        let (status, export) = call(&app, "GET", "/export?batch=b1", None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(export["rows"].as_array().unwrap().len(), 6);
        let scores = export["human_scores"].as_array().unwrap();
        assert_eq!(scores.len(), 1);
        assert!((scores[0]["value"].as_f64().unwrap() - 0.8).abs() < 1e-12);

        let (status, err) = call(&app, "GET", "/export?batch=nope", None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(err["code"], "not_found");
        let (status, _) = call(&app, "GET", "/tasks/next?worker=", None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let (status, err) = call(&app, "POST", "/ratings", Some(json!({"task_id": 3}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(err["code"], "bad_request");
    }

    #[tokio::test]
    async fn serves_image_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.png");
        std::fs::write(&file, b"PNGDATA").unwrap();
        let mut cat = catalog(1, 0);
        let mut index = crate::metrics::ImageIndex::new();
        let record_id = cat.records[0].id.clone();
        index.insert(record_id, crate::backends::ImageRef::from_file("img-a", &file, 4, 4).unwrap());
        cat.images.insert("local".into(), index);
        let app = router(Arc::new(AnnotationService::in_memory(cat)));
        let resp = app
            .clone()
            .oneshot(Request::builder().uri("/images/img-a").body(Body::empty()).unwrap())
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
        assert_eq!(&resp.into_body().collect().await.unwrap().to_bytes()[..], b"PNGDATA");
        let (status, _) = call(&app, "GET", "/images/missing", None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
    }
}
