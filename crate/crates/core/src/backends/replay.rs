use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendError, BackendResult, BackendRole, Captioner, ChatBackend, Detector,
    Embedder, Generator, ImageRef, VqaBackend,
};
use crate::geometry::Detection;
use crate::util::sha256_hex;

/// One cache line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub role: BackendRole,
    pub model: String,
    pub request_digest: String,
    pub request: Value,
    pub response: Value,
}

/// SHA-256 over role, model id and the canonical request payload (which
/// carries the image byte digest).
pub fn request_digest(role: BackendRole, model: &str, request: &Value) -> String {
    // serde_json maps are ordered by key, so this serialization is canonical.
    let canonical = json!({ "role": role, "model": model, "request": request });
    sha256_hex(canonical.to_string().as_bytes())
}

/// Append-only response store keyed by request digest.
pub struct ReplayCache {
    entries: RwLock<HashMap<String, Value>>,
    models: RwLock<BTreeSet<(BackendRole, String)>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self { entries: RwLock::new(HashMap::new()), models: RwLock::default(), file: None, path: None }
    }

    /// Loads an existing JSON-lines cache (if any) and appends new entries to it.
    pub fn open(path: &Path) -> BackendResult<Self> {
        let mut entries = HashMap::new();
        let mut models = BTreeSet::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let entry: CacheEntry = serde_json::from_str(line).map_err(|e| {
                    BackendError::Cache(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                models.insert((entry.role, entry.model));
                entries.entry(entry.request_digest).or_insert(entry.response);
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| BackendError::Cache(format!("{}: {e}", parent.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self {
            entries: RwLock::new(entries),
            models: RwLock::new(models),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, digest: &str) -> Option<Value> {
        self.entries.read().get(digest).cloned()
    }

    /// Descriptors for every (role, model) pair seen in the cache.
    pub fn descriptors(&self) -> Vec<BackendDescriptor> {
        self.models.read().iter().map(|(role, model)| BackendDescriptor::new(*role, "replay", model.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `entry` unless its digest is already present, and returns the
    /// response that is now cached for that digest.
    pub fn record(&self, entry: CacheEntry) -> BackendResult<Value> {
        let mut entries = self.entries.write();
        if let Some(existing) = entries.get(&entry.request_digest) {
            return Ok(existing.clone());
        }
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
            line.push('\n');
            let mut file = file.lock();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        self.models.write().insert((entry.role, entry.model.clone()));
        entries.insert(entry.request_digest, entry.response.clone());
        Ok(entry.response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Misses are errors.
    Strict,
    /// Misses go to the wrapped backend and are appended to the cache.
    Record,
}

/// Placeholder backend for strict replay: every live call fails.
#[derive(Debug, Clone)]
pub struct Offline {
    descriptor: BackendDescriptor,
}

impl Offline {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        Self { descriptor }
    }

    fn fail<T>(&self) -> BackendResult<T> {
        Err(BackendError::Transport {
            role: self.descriptor.role,
            message: "no live backend configured".into(),
        })
    }
}

impl VqaBackend for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn yes_probability(&self, _: &ImageRef, _: &str) -> BackendResult<f64> {
        self.fail()
    }
}

impl Captioner for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn caption(&self, _: &ImageRef) -> BackendResult<String> {
        self.fail()
    }
}

impl Embedder for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn embed_text(&self, _: &str) -> BackendResult<Vec<f64>> {
        self.fail()
    }
    fn embed_image(&self, _: &ImageRef) -> BackendResult<Vec<f64>> {
        self.fail()
    }
}

impl Detector for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn detect(&self, _: &ImageRef) -> BackendResult<Vec<Detection>> {
        self.fail()
    }
}

impl ChatBackend for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn chat(&self, _: &ImageRef, _: &[String]) -> BackendResult<String> {
        self.fail()
    }
}

impl Generator for Offline {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }
    fn generate(&self, _: &str, _: u64, _: usize) -> BackendResult<Vec<ImageRef>> {
        self.fail()
    }
}

/// Routes a backend through a [`ReplayCache`].
pub struct Replayed<B> {
    inner: B,
    cache: Arc<ReplayCache>,
    mode: ReplayMode,
}

impl<B> Replayed<B> {
    pub fn new(inner: B, cache: Arc<ReplayCache>, mode: ReplayMode) -> Self {
        Self { inner, cache, mode }
    }

    fn call<T, F>(&self, descriptor: BackendDescriptor, request: Value, live: F) -> BackendResult<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&B) -> BackendResult<T>,
    {
        let digest = request_digest(descriptor.role, &descriptor.model, &request);
        let decode = |v: Value| {
            serde_json::from_value(v).map_err(|e| BackendError::Cache(format!("{digest}: {e}")))
        };
        if let Some(hit) = self.cache.get(&digest) {
            return decode(hit);
        }
        match self.mode {
            ReplayMode::Strict => Err(BackendError::ReplayMiss {
                role: descriptor.role,
                model: descriptor.model,
                digest,
            }),
            ReplayMode::Record => {
                let response = live(&self.inner)?;
                let value = serde_json::to_value(&response).map_err(|e| BackendError::Cache(e.to_string()))?;
                let stored = self.cache.record(CacheEntry {
                    role: descriptor.role,
                    model: descriptor.model,
                    request_digest: digest.clone(),
                    request,
                    response: value,
                })?;
                decode(stored)
            }
        }
    }
}

impl<B: VqaBackend> VqaBackend for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn yes_probability(&self, image: &ImageRef, question: &str) -> BackendResult<f64> {
        let request = json!({ "image": image.digest, "question": question });
        self.call(self.descriptor(), request, |b| b.yes_probability(image, question))
    }
}

impl<B: Captioner> Captioner for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn caption(&self, image: &ImageRef) -> BackendResult<String> {
        let request = json!({ "image": image.digest });
        self.call(self.descriptor(), request, |b| b.caption(image))
    }
}

impl<B: Embedder> Embedder for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn embed_text(&self, text: &str) -> BackendResult<Vec<f64>> {
        let request = json!({ "kind": "text", "text": text });
        self.call(self.descriptor(), request, |b| b.embed_text(text))
    }
    fn embed_image(&self, image: &ImageRef) -> BackendResult<Vec<f64>> {
        let request = json!({ "kind": "image", "image": image.digest });
        self.call(self.descriptor(), request, |b| b.embed_image(image))
    }
}

impl<B: Detector> Detector for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn detect(&self, image: &ImageRef) -> BackendResult<Vec<Detection>> {
        let request = json!({ "image": image.digest, "width": image.width, "height": image.height });
        self.call(self.descriptor(), request, |b| b.detect(image))
    }
}

impl<B: ChatBackend> ChatBackend for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn chat(&self, image: &ImageRef, turns: &[String]) -> BackendResult<String> {
        let request = json!({ "image": image.digest, "turns": turns });
        self.call(self.descriptor(), request, |b| b.chat(image, turns))
    }
}

impl<B: Generator> Generator for Replayed<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }
    fn generate(&self, prompt: &str, seed: u64, n: usize) -> BackendResult<Vec<ImageRef>> {
        let request = json!({ "prompt": prompt, "seed": seed, "n": n });
        self.call(self.descriptor(), request, |b| b.generate(prompt, seed, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FakeEmbedder, FakeVqa};

    fn img() -> ImageRef {
        ImageRef::from_bytes("img1", b"bytes", 64, 64)
    }

    #[test]
    fn recorded_response_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let live = {
            let cache = Arc::new(ReplayCache::open(&path).unwrap());
            let vqa = Replayed::new(FakeVqa::new(5), cache, ReplayMode::Record);
            vqa.yes_probability(&img(), "a red car?").unwrap()
        };
        let cache = Arc::new(ReplayCache::open(&path).unwrap());
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.descriptors(), [BackendDescriptor::new(BackendRole::Vqa, "replay", FakeVqa::new(5).descriptor().model)]);
        let strict = Replayed::new(
            Offline::new(FakeVqa::new(5).descriptor()),
            cache,
            ReplayMode::Strict,
        );
        let replayed = strict.yes_probability(&img(), "a red car?").unwrap();
        assert_eq!(replayed.to_bits(), live.to_bits());
        let miss = strict.yes_probability(&img(), "a blue car?").unwrap_err();
        assert!(matches!(miss, BackendError::ReplayMiss { .. }));
    }

    #[test]
    fn embeddings_roundtrip_bit_exact() {
        let cache = Arc::new(ReplayCache::in_memory());
        let e = Replayed::new(FakeEmbedder::new(2, 16), cache.clone(), ReplayMode::Record);
        let first = e.embed_text("a green bench").unwrap();
        let strict = Replayed::new(
            Offline::new(FakeEmbedder::new(2, 16).descriptor()),
            cache,
            ReplayMode::Strict,
        );
        let again = strict.embed_text("a green bench").unwrap();
        assert_eq!(
            first.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            again.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn digest_depends_on_model_and_role() {
        let req = json!({ "question": "a cat?" });
        let a = request_digest(BackendRole::Vqa, "m1", &req);
        assert_ne!(a, request_digest(BackendRole::Vqa, "m2", &req));
        assert_ne!(a, request_digest(BackendRole::Captioner, "m1", &req));
        assert_eq!(a, request_digest(BackendRole::Vqa, "m1", &req));
    }

    #[test]
    fn duplicate_records_are_not_appended() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cache = ReplayCache::open(&path).unwrap();
        let entry = CacheEntry {
            role: BackendRole::Vqa,
            model: "m".into(),
            request_digest: "d".into(),
            request: json!({}),
            response: json!(0.5),
        };
        cache.record(entry.clone()).unwrap();
        let again = cache.record(CacheEntry { response: json!(0.9), ..entry }).unwrap();
        assert_eq!(again, json!(0.5));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }
}
