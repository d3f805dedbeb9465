//! Runs a rating batch end to end through the HTTP router, in process.
//!
//!     cargo run --example annotation_service
//!
//! Pass `--serve` to keep the server on 127.0.0.1:8080 instead.

use std::sync::Arc;

use compbench::annotation::{router, serve, AnnotationService, BatchRequest, Catalog};
use compbench::backends::FakeGenerator;
use compbench::metrics::ImageIndex;
use compbench::suite::SuiteBuilder;
use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, path: &str, body: Option<Value>) -> Value {
    let body = body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty);
    let req = Request::builder().method(method).uri(path).header("content-type", "application/json").body(body).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(Value::Null)
}

#[tokio::main]
async fn main() {
    let suite = SuiteBuilder::default().build().unwrap();
    let index = ImageIndex::generate(&suite.records, &FakeGenerator::new(512, 512), 0, 2).unwrap();
    let service = Arc::new(AnnotationService::in_memory(Catalog::new(suite.records).with_model("sd2", index)));

    if std::env::args().any(|a| a == "--serve") {
        serve(service, "127.0.0.1:8080".parse().unwrap()).await.unwrap();
        return;
    }

    let app = router(service);

    let req = BatchRequest { prompts_per_cell: 1, images_per_prompt: 1, ..BatchRequest::new("demo", "sd2") };
    println!("created {}", call(&app, "POST", "/batches", Some(serde_json::to_value(&req).unwrap())).await);

    for (worker, score) in [("alice", 5), ("bob", 4), ("carol", 3)] {
        loop {
            let next = call(&app, "GET", &format!("/tasks/next?worker={worker}"), None).await;
            let Some(task_id) = next["task"]["task_id"].as_str() else { break };
            let ack = call(&app, "POST", "/ratings", Some(json!({"task_id": task_id, "worker_id": worker, "score": score}))).await;
            if ack.get("code").is_some() {
                println!("{worker}: {ack}");
                break;
            }
        }
    }
    let export = call(&app, "GET", "/export?batch=demo", None).await;
    for row in export["rows"].as_array().unwrap() {
        println!("{:<10} {:<16} scores {} -> {}", row["category"].as_str().unwrap(), row["prompt_id"].as_str().unwrap(), row["scores"], row["value"]);
    }
}
