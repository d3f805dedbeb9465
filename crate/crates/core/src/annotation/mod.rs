//! Human rating collection: each (prompt, image) pair is rated 1-5 by a
//! fixed number of distinct workers. State is an append-only JSON-lines
//! event log replayed on startup.

mod http;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ImageRef;
use crate::metrics::ImageIndex;
use crate::stats::{aggregate_human, HumanScore};
use crate::suite::{Category, PromptRecord};
use crate::util::seeded_rng;

pub use http::{router, serve};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("worker `{worker}` already rated task `{task}`")]
    Duplicate { task: String, worker: String },
    #[error("task `{0}` already has all its ratings")]
    Complete(String),
    #[error("batch `{0}` already exists")]
    BatchExists(String),
    #[error("not enough material: {0}")]
    Shortfall(String),
    #[error("event log: {0}")]
    Log(String),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::BadRequest(_) => "bad_request",
            AnnotationError::NotFound(_) => "not_found",
            AnnotationError::Duplicate { .. } => "duplicate_rating",
            AnnotationError::Complete(_) => "task_complete",
            AnnotationError::BatchExists(_) => "batch_exists",
            AnnotationError::Shortfall(_) => "shortfall",
            AnnotationError::Log(_) => "log_error",
        }
    }
}

pub type AnnotationResult<T> = Result<T, AnnotationError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub batch_id: String,
    pub model: String,
    pub prompt_id: String,
    pub image_id: String,
    pub category: Category,
    pub prompt: String,
    /// Path under which the service serves the image bytes.
    pub image_url: String,
    pub ratings_needed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub task_id: String,
    pub worker_id: String,
    pub score: u8,
    pub timestamp: DateTime<Utc>,
}

fn default_images_per_prompt() -> usize {
    2
}
fn default_prompts_per_cell() -> usize {
    25
}
fn default_ratings_needed() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRequest {
    pub batch_id: String,
    /// Key of the image index to sample from.
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_images_per_prompt")]
    pub images_per_prompt: usize,
    #[serde(default = "default_prompts_per_cell")]
    pub prompts_per_cell: usize,
    #[serde(default = "default_ratings_needed")]
    pub ratings_needed: usize,
    /// Defaults to all six categories.
    #[serde(default)]
    pub categories: Vec<Category>,
}

impl BatchRequest {
    pub fn new(batch_id: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            batch_id: batch_id.into(),
            model: model.into(),
            seed: 0,
            images_per_prompt: default_images_per_prompt(),
            prompts_per_cell: default_prompts_per_cell(),
            ratings_needed: default_ratings_needed(),
            categories: Vec::new(),
        }
    }
}

/// Prompts and per-model images the service can build batches from.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub records: Vec<PromptRecord>,
    pub images: BTreeMap<String, ImageIndex>,
}

impl Catalog {
    pub fn new(records: Vec<PromptRecord>) -> Self {
        Self { records, images: BTreeMap::new() }
    }

    pub fn with_model(mut self, model: impl Into<String>, index: ImageIndex) -> Self {
        self.images.insert(model.into(), index);
        self
    }

    pub fn find_image(&self, image_id: &str) -> Option<&ImageRef> {
        self.images.values().find_map(|index| {
            self.records
                .iter()
                .flat_map(|r| index.images(&r.id))
                .find(|img| img.id == image_id)
        })
    }
}

/// Seeded task sampling: `prompts_per_cell` prompts per category and
/// `images_per_prompt` images per prompt.
pub fn plan_batch(catalog: &Catalog, req: &BatchRequest) -> AnnotationResult<Vec<AnnotationTask>> {
    if req.batch_id.trim().is_empty() {
        return Err(AnnotationError::BadRequest("batch_id is empty".into()));
    }
    if req.images_per_prompt == 0 || req.prompts_per_cell == 0 || req.ratings_needed == 0 {
        return Err(AnnotationError::BadRequest(
            "images_per_prompt, prompts_per_cell and ratings_needed must be at least 1".into(),
        ));
    }
    let index = catalog
        .images
        .get(&req.model)
        .ok_or_else(|| AnnotationError::NotFound(format!("image index for model `{}`", req.model)))?;
    let categories = if req.categories.is_empty() { Category::ALL.to_vec() } else { req.categories.clone() };
    let mut tasks = Vec::new();
    for category in categories {
        let mut eligible: Vec<&PromptRecord> = catalog
            .records
            .iter()
            .filter(|r| r.category == category && index.images(&r.id).len() >= req.images_per_prompt)
            .collect();
        if eligible.len() < req.prompts_per_cell {
            return Err(AnnotationError::Shortfall(format!(
                "{category}: {} prompts with at least {} images, {} requested",
                eligible.len(),
                req.images_per_prompt,
                req.prompts_per_cell
            )));
        }
        let mut rng = seeded_rng(req.seed, &format!("{}/{}/{category}", req.batch_id, req.model));
        eligible.shuffle(&mut rng);
        for record in eligible.into_iter().take(req.prompts_per_cell) {
            let mut images: Vec<&ImageRef> = index.images(&record.id).iter().collect();
            images.shuffle(&mut rng);
            for image in images.into_iter().take(req.images_per_prompt) {
                tasks.push(AnnotationTask {
                    task_id: format!("{}-{:04}", req.batch_id, tasks.len()),
                    batch_id: req.batch_id.clone(),
                    model: req.model.clone(),
                    prompt_id: record.id.clone(),
                    image_id: image.id.clone(),
                    category,
                    prompt: record.text.clone(),
                    image_url: format!("/images/{}", image.id),
                    ratings_needed: req.ratings_needed,
                });
            }
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    BatchCreated { request: BatchRequest, tasks: Vec<AnnotationTask> },
    Rating(RatingRecord),
}

/// Everything derivable from the event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    pub batches: BTreeMap<String, BatchRequest>,
    /// Tasks in creation order.
    pub tasks: Vec<AnnotationTask>,
    pub ratings: BTreeMap<String, Vec<RatingRecord>>,
    task_index: HashMap<String, usize>,
}

impl State {
    fn check(&self, event: &Event) -> AnnotationResult<()> {
        match event {
            Event::BatchCreated { request, tasks } => {
                if self.batches.contains_key(&request.batch_id) {
                    return Err(AnnotationError::BatchExists(request.batch_id.clone()));
                }
                if let Some(t) = tasks.iter().find(|t| self.task_index.contains_key(&t.task_id)) {
                    return Err(AnnotationError::BadRequest(format!("task id `{}` reused", t.task_id)));
                }
                Ok(())
            }
            Event::Rating(r) => {
                if !(1..=5).contains(&r.score) {
                    return Err(AnnotationError::BadRequest(format!("score {} outside 1..=5", r.score)));
                }
                if r.worker_id.trim().is_empty() {
                    return Err(AnnotationError::BadRequest("worker id is empty".into()));
                }
                let task = self.task(&r.task_id).ok_or_else(|| AnnotationError::NotFound(format!("task `{}`", r.task_id)))?;
                let existing = self.ratings.get(&r.task_id).map(Vec::as_slice).unwrap_or_default();
                if existing.iter().any(|x| x.worker_id == r.worker_id) {
                    return Err(AnnotationError::Duplicate { task: r.task_id.clone(), worker: r.worker_id.clone() });
                }
                if existing.len() >= task.ratings_needed {
                    return Err(AnnotationError::Complete(r.task_id.clone()));
                }
                Ok(())
            }
        }
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::BatchCreated { request, tasks } => {
                for t in tasks {
                    self.task_index.insert(t.task_id.clone(), self.tasks.len());
                    self.tasks.push(t);
                }
                self.batches.insert(request.batch_id.clone(), request);
            }
            Event::Rating(r) => self.ratings.entry(r.task_id.clone()).or_default().push(r),
        }
    }

    pub fn task(&self, task_id: &str) -> Option<&AnnotationTask> {
        self.task_index.get(task_id).map(|&i| &self.tasks[i])
    }

    pub fn rating_count(&self, task_id: &str) -> usize {
        self.ratings.get(task_id).map_or(0, Vec::len)
    }

    pub fn is_complete(&self, task: &AnnotationTask) -> bool {
        self.rating_count(&task.task_id) >= task.ratings_needed
    }
}

/// Aggregated ratings of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub task_id: String,
    pub model: String,
    pub prompt_id: String,
    pub image_id: String,
    pub category: Category,
    pub scores: Vec<u8>,
    /// Mean rating divided by 5; absent when nobody rated the task yet.
    pub value: Option<f64>,
    pub complete: bool,
}

/// Human scores for correlation. Incomplete tasks are left out unless asked for.
pub fn human_scores(rows: &[ExportRow], include_incomplete: bool) -> Vec<HumanScore> {
    rows.iter()
        .filter(|r| r.complete || include_incomplete)
        .filter_map(|r| {
            r.value.map(|value| HumanScore {
                prompt_id: r.prompt_id.clone(),
                image_id: r.image_id.clone(),
                value,
                raters: r.scores.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub task_id: String,
    pub ratings: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_id: String,
    pub tasks: usize,
    pub seed: u64,
}

struct Inner {
    state: State,
    log: Option<File>,
    leases: HashMap<(String, String), Instant>,
}

/// The rating service. A single mutex serializes assignment and writes.
pub struct AnnotationService {
    catalog: Catalog,
    inner: Mutex<Inner>,
    lease: Duration,
    log_path: Option<PathBuf>,
}

impl AnnotationService {
    pub fn in_memory(catalog: Catalog) -> Self {
        Self {
            catalog,
            inner: Mutex::new(Inner { state: State::default(), log: None, leases: HashMap::new() }),
            lease: Duration::from_secs(600),
            log_path: None,
        }
    }

    /// Replays `path` (if present) and appends new events to it.
    pub fn open(catalog: Catalog, path: &Path) -> AnnotationResult<Self> {
        let state = replay_log(path)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AnnotationError::Log(format!("{}: {e}", path.display())))?;
        Ok(Self {
            catalog,
            inner: Mutex::new(Inner { state, log: Some(log), leases: HashMap::new() }),
            lease: Duration::from_secs(600),
            log_path: Some(path.to_path_buf()),
        })
    }

    /// How long an assigned task stays reserved for its worker.
    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn state(&self) -> State {
        self.inner.lock().state.clone()
    }

    fn commit(inner: &mut Inner, event: Event) -> AnnotationResult<()> {
        inner.state.check(&event)?;
        if let Some(log) = &mut inner.log {
            let mut line = serde_json::to_string(&event).map_err(|e| AnnotationError::Log(e.to_string()))?;
            line.push('\n');
            log.write_all(line.as_bytes())
                .and_then(|_| log.flush())
                .map_err(|e| AnnotationError::Log(e.to_string()))?;
        }
        inner.state.apply(event);
        Ok(())
    }

    pub fn create_batch(&self, req: BatchRequest) -> AnnotationResult<BatchSummary> {
        let tasks = plan_batch(&self.catalog, &req)?;
        let summary = BatchSummary { batch_id: req.batch_id.clone(), tasks: tasks.len(), seed: req.seed };
        Self::commit(&mut self.inner.lock(), Event::BatchCreated { request: req, tasks })?;
        Ok(summary)
    }

    /// An open task this worker has not rated, reserved for them for the
    /// lease period. A task is handed out only while its ratings plus live
    /// reservations by other workers stay below `ratings_needed`.
    pub fn next_task(&self, worker_id: &str) -> AnnotationResult<Option<AnnotationTask>> {
        if worker_id.trim().is_empty() {
            return Err(AnnotationError::BadRequest("worker id is empty".into()));
        }
        let mut inner = self.inner.lock();
        let now = Instant::now();
        inner.leases.retain(|_, expires| *expires > now);
        let Inner { state, leases, .. } = &mut *inner;
        let mut reserved: HashMap<&str, usize> = HashMap::new();
        for (task, worker) in leases.keys() {
            if worker != worker_id {
                *reserved.entry(task.as_str()).or_default() += 1;
            }
        }
        let rated_by_worker: BTreeSet<&str> = state
            .ratings
            .values()
            .flatten()
            .filter(|r| r.worker_id == worker_id)
            .map(|r| r.task_id.as_str())
            .collect();
        let pick = state.tasks.iter().find(|t| {
            let mine = leases.contains_key(&(t.task_id.clone(), worker_id.to_owned()));
            !rated_by_worker.contains(t.task_id.as_str())
                && !state.is_complete(t)
                && (mine
                    || state.rating_count(&t.task_id) + reserved.get(t.task_id.as_str()).copied().unwrap_or(0)
                        < t.ratings_needed)
        });
        let pick = pick.cloned();
        if let Some(t) = &pick {
            leases.insert((t.task_id.clone(), worker_id.to_owned()), now + self.lease);
        }
        Ok(pick)
    }

    pub fn submit_rating(&self, task_id: &str, worker_id: &str, score: u8) -> AnnotationResult<RatingAck> {
        let mut inner = self.inner.lock();
        let record = RatingRecord {
            task_id: task_id.to_owned(),
            worker_id: worker_id.to_owned(),
            score,
            timestamp: Utc::now(),
        };
        Self::commit(&mut inner, Event::Rating(record))?;
        inner.leases.remove(&(task_id.to_owned(), worker_id.to_owned()));
        let task = inner.state.task(task_id).cloned().expect("rated task exists");
        Ok(RatingAck {
            task_id: task_id.to_owned(),
            ratings: inner.state.rating_count(task_id),
            complete: inner.state.is_complete(&task),
        })
    }

    pub fn worker_rating_count(&self, worker_id: &str) -> usize {
        self.inner.lock().state.ratings.values().flatten().filter(|r| r.worker_id == worker_id).count()
    }

    pub fn export(&self, batch_id: &str) -> AnnotationResult<Vec<ExportRow>> {
        let inner = self.inner.lock();
        if !inner.state.batches.contains_key(batch_id) {
            return Err(AnnotationError::NotFound(format!("batch `{batch_id}`")));
        }
        Ok(export_rows(&inner.state, batch_id))
    }

    pub fn image_bytes(&self, image_id: &str) -> AnnotationResult<Vec<u8>> {
        let image = self
            .catalog
            .find_image(image_id)
            .ok_or_else(|| AnnotationError::NotFound(format!("image `{image_id}`")))?;
        let path = image
            .path
            .as_ref()
            .ok_or_else(|| AnnotationError::NotFound(format!("file for image `{image_id}`")))?;
        std::fs::read(path).map_err(|_| AnnotationError::NotFound(format!("file for image `{image_id}`")))
    }
}

/// Per-task aggregation; a pure function of the log.
pub fn export_rows(state: &State, batch_id: &str) -> Vec<ExportRow> {
    state
        .tasks
        .iter()
        .filter(|t| t.batch_id == batch_id)
        .map(|t| {
            let scores: Vec<u8> = state.ratings.get(&t.task_id).into_iter().flatten().map(|r| r.score).collect();
            ExportRow {
                task_id: t.task_id.clone(),
                model: t.model.clone(),
                prompt_id: t.prompt_id.clone(),
                image_id: t.image_id.clone(),
                category: t.category,
                value: aggregate_human(&scores).ok(),
                complete: scores.len() >= t.ratings_needed,
                scores,
            }
        })
        .collect()
}

/// Rebuilds state from an event log; a missing file is an empty state.
pub fn replay_log(path: &Path) -> AnnotationResult<State> {
    let mut state = State::default();
    if !path.exists() {
        return Ok(state);
    }
    let text = std::fs::read_to_string(path).map_err(|e| AnnotationError::Log(format!("{}: {e}", path.display())))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event: Event = serde_json::from_str(line)
            .map_err(|e| AnnotationError::Log(format!("{} line {}: {e}", path.display(), i + 1)))?;
        state
            .check(&event)
            .map_err(|e| AnnotationError::Log(format!("{} line {}: {e}", path.display(), i + 1)))?;
        state.apply(event);
    }
    Ok(state)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::backends::FakeGenerator;
    use crate::suite::{Novelty, Source, Split};

    pub(crate) fn catalog(prompts_per_category: usize, images: usize) -> Catalog {
        let mut records = Vec::new();
        for c in Category::ALL {
            for i in 0..prompts_per_category {
                records.push(PromptRecord {
                    id: format!("{c}_{i:03}"),
                    category: c,
                    split: Split::Test,
                    novelty: Novelty::NotApplicable,
                    text: format!("{c} prompt {i}"),
                    objects: vec![],
                    relations: vec![],
                    source: Source::Chatgpt,
                    structure_missing: true,
                });
            }
        }
        let index = ImageIndex::generate(&records, &FakeGenerator::new(64, 64), 0, images).unwrap();
        Catalog::new(records).with_model("sd2", index)
    }

    #[test]
    fn batch_has_300_tasks_per_model() {
        let cat = catalog(40, 4);
        let tasks = plan_batch(&cat, &BatchRequest::new("b", "sd2")).unwrap();
        assert_eq!(tasks.len(), 300);
        for c in Category::ALL {
            let cell: Vec<_> = tasks.iter().filter(|t| t.category == c).collect();
            assert_eq!(cell.len(), 50);
            let prompts: BTreeSet<_> = cell.iter().map(|t| &t.prompt_id).collect();
            assert_eq!(prompts.len(), 25);
        }
        assert_eq!(tasks, plan_batch(&cat, &BatchRequest::new("b", "sd2")).unwrap());
        let mut other = BatchRequest::new("b", "sd2");
        other.seed = 1;
        assert_ne!(tasks, plan_batch(&cat, &other).unwrap());
    }

    #[test]
    fn tiny_batch_and_shortfall() {
        let cat = catalog(3, 1);
        let mut req = BatchRequest::new("b", "sd2");
        req.prompts_per_cell = 1;
        req.images_per_prompt = 1;
        assert_eq!(plan_batch(&cat, &req).unwrap().len(), 6);
        let err = plan_batch(&cat, &BatchRequest::new("b", "sd2")).unwrap_err();
        assert!(err.to_string().contains("color: 0 prompts with at least 2 images, 25 requested"), "{err}");
    }

    fn small_service() -> AnnotationService {
        let svc = AnnotationService::in_memory(catalog(2, 1));
        let mut req = BatchRequest::new("b", "sd2");
        req.prompts_per_cell = 1;
        req.images_per_prompt = 1;
        req.categories = vec![Category::Color];
        svc.create_batch(req).unwrap();
        svc
    }

    #[test]
    fn rating_protocol() {
        let svc = small_service();
        let t = svc.next_task("w1").unwrap().unwrap();
        assert_eq!(svc.submit_rating(&t.task_id, "w1", 5).unwrap().ratings, 1);
        assert!(matches!(svc.submit_rating(&t.task_id, "w1", 4), Err(AnnotationError::Duplicate { .. })));
        assert!(matches!(svc.submit_rating(&t.task_id, "w2", 6), Err(AnnotationError::BadRequest(_))));
        assert!(svc.next_task("w1").unwrap().is_none());
        svc.submit_rating(&t.task_id, "w2", 4).unwrap();
        let ack = svc.submit_rating(&t.task_id, "w3", 3).unwrap();
        assert!(ack.complete);
        assert!(matches!(svc.submit_rating(&t.task_id, "w4", 3), Err(AnnotationError::Complete(_))));
        assert!(svc.next_task("w4").unwrap().is_none());
        let rows = svc.export("b").unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].value.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(human_scores(&rows, false).len(), 1);
    }

    #[test]
    fn leases_limit_concurrent_assignment() {
        let svc = small_service();
        for w in ["a", "b", "c"] {
            assert!(svc.next_task(w).unwrap().is_some());
        }
        assert!(svc.next_task("d").unwrap().is_none());
        let expired = small_service().with_lease(Duration::ZERO);
        for w in ["a", "b", "c", "d"] {
            assert!(expired.next_task(w).unwrap().is_some());
        }
    }

    #[test]
    fn incomplete_tasks_are_flagged() {
        let svc = small_service();
        let t = svc.next_task("w1").unwrap().unwrap();
        svc.submit_rating(&t.task_id, "w1", 2).unwrap();
        let rows = svc.export("b").unwrap();
        assert!(!rows[0].complete);
        assert!(human_scores(&rows, false).is_empty());
        assert_eq!(human_scores(&rows, true).len(), 1);
    }

    #[test]
    fn log_replay_reconstructs_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let before = {
            let svc = AnnotationService::open(catalog(2, 1), &path).unwrap();
            let mut req = BatchRequest::new("b", "sd2");
            req.prompts_per_cell = 2;
            req.images_per_prompt = 1;
            svc.create_batch(req.clone()).unwrap();
            assert!(matches!(svc.create_batch(req), Err(AnnotationError::BatchExists(_))));
            for w in ["x", "y"] {
                while let Some(t) = svc.next_task(w).unwrap() {
                    svc.submit_rating(&t.task_id, w, 4).unwrap();
                }
            }
            (svc.state(), svc.export("b").unwrap())
        };
        let svc = AnnotationService::open(catalog(2, 1), &path).unwrap();
        assert_eq!(svc.state(), before.0);
        assert_eq!(svc.export("b").unwrap(), before.1);
        assert_eq!(replay_log(&path).unwrap(), before.0);
    }
}
