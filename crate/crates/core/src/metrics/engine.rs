use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score, CotPromptSet, MetricError, MetricKind, MetricResult, MetricScore, QuestionMode};
use crate::backends::{Backends, Generator, ImageRef};
use crate::geometry::{GeometryConfig, NounClassMap};
use crate::suite::{Category, PromptRecord, Vocabulary};
use crate::util::mean;

/// Everything a metric needs besides backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub geometry: GeometryConfig,
    pub mapping: NounClassMap,
    #[serde(default)]
    pub question_mode: QuestionMode,
    #[serde(default)]
    pub cot_prompts: CotPromptSet,
    /// Worker threads; `None` uses every available core.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            mapping: NounClassMap::from_vocabulary(&Vocabulary::default()),
            question_mode: QuestionMode::default(),
            cot_prompts: CotPromptSet::default(),
            workers: None,
        }
    }
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> MetricError {
    MetricError::File { path: path.display().to_string(), message: e.to_string() }
}

/// One line of an image index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub prompt_id: String,
    #[serde(flatten)]
    pub image: ImageRef,
}

/// Images per prompt id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageIndex {
    by_prompt: BTreeMap<String, Vec<ImageRef>>,
}

impl ImageIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt_id: impl Into<String>, image: ImageRef) {
        self.by_prompt.entry(prompt_id.into()).or_default().push(image);
    }

    pub fn images(&self, prompt_id: &str) -> &[ImageRef] {
        self.by_prompt.get(prompt_id).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.by_prompt.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `k` generated images for every record.
    pub fn generate(
        records: &[PromptRecord],
        generator: &dyn Generator,
        seed: u64,
        k: usize,
    ) -> MetricResult<Self> {
        let mut index = Self::new();
        for r in records {
            for image in generator.generate(&r.text, seed, k)? {
                index.insert(r.id.clone(), image);
            }
        }
        Ok(index)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut index = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: IndexEntry = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            index.insert(entry.prompt_id, entry.image);
        }
        Ok(index)
    }

    pub fn read(path: &Path) -> MetricResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        Self::parse(&text).map_err(|e| file_error(path, e))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (prompt_id, images) in &self.by_prompt {
            for image in images {
                let entry = IndexEntry { prompt_id: prompt_id.clone(), image: image.clone() };
                out.push_str(&serde_json::to_string(&entry).expect("index entries serialize"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> MetricResult<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| file_error(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoreKey {
    pub prompt_id: String,
    pub image_id: String,
    pub metric: MetricKind,
}

impl ScoreKey {
    pub fn new(prompt_id: &str, image_id: &str, metric: MetricKind) -> Self {
        Self { prompt_id: prompt_id.to_owned(), image_id: image_id.to_owned(), metric }
    }
}

/// Append-only JSON-lines store of scores, at most one per key.
#[derive(Debug, Default)]
pub struct ScoreStore {
    scores: BTreeMap<ScoreKey, MetricScore>,
    file: Option<File>,
    path: Option<PathBuf>,
}

impl ScoreStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing scores from `path` and appends new ones to it.
    pub fn open(path: &Path) -> MetricResult<Self> {
        let mut scores = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let s: MetricScore = serde_json::from_str(line)
                    .map_err(|e| file_error(path, format!("line {}: {e}", i + 1)))?;
                scores.entry(s.key()).or_insert(s);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| file_error(path, e))?;
        Ok(Self { scores, file: Some(file), path: Some(path.to_path_buf()) })
    }

    pub fn contains(&self, key: &ScoreKey) -> bool {
        self.scores.contains_key(key)
    }

    pub fn get(&self, key: &ScoreKey) -> Option<&MetricScore> {
        self.scores.get(key)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = &MetricScore> {
        self.scores.values()
    }

    /// Adds a score; returns false (and writes nothing) if its key exists.
    pub fn insert(&mut self, score: MetricScore) -> MetricResult<bool> {
        let key = score.key();
        if self.scores.contains_key(&key) {
            return Ok(false);
        }
        if let Some(file) = &mut self.file {
            let path = self.path.as_deref().unwrap_or(Path::new("scores"));
            let mut line = serde_json::to_string(&score).map_err(|e| file_error(path, e))?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|e| file_error(path, e))?;
        }
        self.scores.insert(key, score);
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScore {
    pub prompt_id: String,
    pub image_id: String,
    pub metric: MetricKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    /// Mean over each prompt's images.
    pub prompt_means: BTreeMap<String, f64>,
    /// Mean over each category's prompt means.
    pub category_means: BTreeMap<Category, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: BTreeMap<MetricKind, CategorySummary>,
}

impl Summary {
    pub fn from_store(
        records: &[PromptRecord],
        index: &ImageIndex,
        metrics: &[MetricKind],
        store: &ScoreStore,
    ) -> Self {
        let mut summary = Summary::default();
        for &metric in metrics {
            let mut s = CategorySummary::default();
            let mut per_category: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
            for r in records {
                let values: Vec<f64> = index
                    .images(&r.id)
                    .iter()
                    .filter_map(|img| store.get(&ScoreKey::new(&r.id, &img.id, metric)))
                    .map(|sc| sc.value)
                    .collect();
                if let Some(m) = mean(&values) {
                    s.prompt_means.insert(r.id.clone(), m);
                    per_category.entry(r.category).or_default().push(m);
                }
            }
            for (c, v) in per_category {
                if let Some(m) = mean(&v) {
                    s.category_means.insert(c, m);
                }
            }
            summary.metrics.insert(metric, s);
        }
        summary
    }

    /// Category columns, one metric per row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", "metric");
        for c in Category::ALL {
            out.push_str(&format!("{:>13}", c.as_str()));
        }
        out.push('\n');
        for (metric, s) in &self.metrics {
            out.push_str(&format!("{:<14}", metric.as_str()));
            for c in Category::ALL {
                match s.category_means.get(&c) {
                    Some(v) => out.push_str(&format!("{v:>13.4}")),
                    None => out.push_str(&format!("{:>13}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub new_scores: usize,
    pub reused: usize,
    /// Prompts with no images in the index.
    pub missing_images: Vec<String>,
    pub skipped: Vec<SkippedScore>,
    pub summary: Summary,
}

const CHUNK: usize = 256;

/// Scores every (prompt, image, metric) triple not already in `store`.
///
/// Work runs in parallel but results are appended in suite order, so two
/// runs over the same inputs write identical stores. Inapplicable metrics
/// are listed in the report; backend failures abort the run after the
/// scores computed so far have been stored.
pub fn evaluate_suite(
    records: &[PromptRecord],
    index: &ImageIndex,
    metrics: &[MetricKind],
    backends: &Backends,
    cfg: &EvalConfig,
    store: &mut ScoreStore,
) -> MetricResult<EvaluationReport> {
    let mut report = EvaluationReport::default();
    let mut tasks: Vec<(&PromptRecord, &ImageRef, MetricKind)> = Vec::new();
    for r in records {
        let images = index.images(&r.id);
        if images.is_empty() {
            report.missing_images.push(r.id.clone());
        }
        for image in images {
            for &metric in metrics {
                if store.contains(&ScoreKey::new(&r.id, &image.id, metric)) {
                    report.reused += 1;
                } else {
                    tasks.push((r, image, metric));
                }
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers.filter(|n| *n > 0) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| MetricError::File { path: "thread pool".into(), message: e.to_string() })?;

    for chunk in tasks.chunks(CHUNK) {
        let results: Vec<MetricResult<MetricScore>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|(r, image, metric)| score(*metric, image, r, backends, cfg))
                .collect()
        });
        for ((r, image, metric), result) in chunk.iter().zip(results) {
            match result {
                Ok(s) => {
                    if store.insert(s)? {
                        report.new_scores += 1;
                    }
                }
                Err(e) if e.is_inapplicable() => report.skipped.push(SkippedScore {
                    prompt_id: r.id.clone(),
                    image_id: image.id.clone(),
                    metric: *metric,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }

    report.summary = Summary::from_store(records, index, metrics, store);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FakeGenerator, VqaBackend};
    use crate::suite::SuiteBuilder;
    use approx::assert_relative_eq;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn two_prompts() -> Vec<PromptRecord> {
        SuiteBuilder::default().build_category(Category::Color).unwrap().into_iter().take(2).collect()
    }

    struct Counting(AtomicUsize);

    impl VqaBackend for Counting {
        fn descriptor(&self) -> crate::backends::BackendDescriptor {
            crate::backends::BackendDescriptor::new(crate::backends::BackendRole::Vqa, "test", "counting")
        }
        fn yes_probability(&self, _: &ImageRef, _: &str) -> crate::backends::BackendResult<f64> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(0.5)
        }
    }

    #[test]
    fn counts_and_resumes() {
        let records = two_prompts();
        let index = ImageIndex::generate(&records, &FakeGenerator::new(512, 512), 0, 10).unwrap();
        let counter = Arc::new(Counting(AtomicUsize::new(0)));
        let mut backends = Backends::fake(1);
        backends.vqa = counter.clone();
        let cfg = EvalConfig::default();
        let mut store = ScoreStore::in_memory();
        let report = evaluate_suite(&records, &index, &[MetricKind::BVqa], &backends, &cfg, &mut store).unwrap();
        assert_eq!(report.new_scores, 20);
        let s = &report.summary.metrics[&MetricKind::BVqa];
        assert_eq!(s.prompt_means.len(), 2);
        assert_eq!(s.category_means.len(), 1);
        assert_relative_eq!(s.category_means[&Category::Color], 0.25, epsilon = 1e-12);

        let calls = counter.0.load(Ordering::SeqCst);
        let again = evaluate_suite(&records, &index, &[MetricKind::BVqa], &backends, &cfg, &mut store).unwrap();
        assert_eq!(again.new_scores, 0);
        assert_eq!(again.reused, 20);
        assert_eq!(counter.0.load(Ordering::SeqCst), calls);
    }

    #[test]
    fn missing_images_are_reported() {
        let records = two_prompts();
        let mut index = ImageIndex::new();
        index.insert(records[0].id.clone(), ImageRef::from_bytes("x", b"x", 512, 512));
        let mut store = ScoreStore::in_memory();
        let report = evaluate_suite(
            &records,
            &index,
            &[MetricKind::Clip, MetricKind::Unidet],
            &Backends::fake(0),
            &EvalConfig::default(),
            &mut store,
        )
        .unwrap();
        assert_eq!(report.missing_images, [records[1].id.clone()]);
        assert_eq!(report.new_scores, 1);
        assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn category_mean_is_mean_of_prompt_means() {
        let mut records = two_prompts();
        records.truncate(2);
        let mut index = ImageIndex::new();
        let mut store = ScoreStore::in_memory();
        for (r, v) in records.iter().zip([0.2, 0.4]) {
            let img = ImageRef::from_bytes(format!("{}-0", r.id), r.id.as_bytes(), 512, 512);
            index.insert(r.id.clone(), img.clone());
            store
                .insert(MetricScore {
                    prompt_id: r.id.clone(),
                    image_id: img.id.clone(),
                    metric: MetricKind::Clip,
                    value: v,
                    detail: super::super::ScoreDetail::Cosine { cosine: v, caption: None },
                })
                .unwrap();
        }
        let s = Summary::from_store(&records, &index, &[MetricKind::Clip], &store);
        assert_relative_eq!(s.metrics[&MetricKind::Clip].category_means[&Category::Color], 0.3, epsilon = 1e-12);
        assert!(s.to_table().contains("0.3000"));
    }

    #[test]
    fn index_roundtrips_through_jsonl() {
        let records = two_prompts();
        let index = ImageIndex::generate(&records, &FakeGenerator::new(64, 64), 3, 2).unwrap();
        assert_eq!(ImageIndex::parse(&index.to_jsonl()).unwrap(), index);
    }
}
