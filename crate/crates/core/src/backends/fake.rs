use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    normalize, BackendDescriptor, BackendResult, BackendRole, Captioner, ChatBackend, Detector,
    Embedder, Generator, ImageRef, VqaBackend,
};
use crate::geometry::{Detection, DetectionFrame};
use crate::util::{fnv64, sha256_hex, unit_from_digest};

fn keyed(seed: u64, parts: &[&str]) -> Vec<u8> {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(&(p.len() as u64).to_le_bytes());
        bytes.extend_from_slice(p.as_bytes());
    }
    bytes
}

/// Yes-probabilities from a lookup table keyed by (image id, question);
/// anything else gets a stable hash-derived value in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct FakeVqa {
    seed: u64,
    table: HashMap<(String, String), f64>,
}

impl FakeVqa {
    pub fn new(seed: u64) -> Self {
        Self { seed, table: HashMap::new() }
    }

    pub fn with(mut self, image_id: &str, question: &str, probability: f64) -> Self {
        self.insert(image_id, question, probability);
        self
    }

    pub fn insert(&mut self, image_id: &str, question: &str, probability: f64) {
        self.table.insert((image_id.to_owned(), question.to_owned()), probability.clamp(0.0, 1.0));
    }
}

impl VqaBackend for FakeVqa {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendRole::Vqa, "fake", format!("fake-vqa-{}", self.seed))
    }

    fn yes_probability(&self, image: &ImageRef, question: &str) -> BackendResult<f64> {
        if question.trim().is_empty() {
            return Err(super::BackendError::InvalidRequest("empty question".into()));
        }
        if let Some(p) = self.table.get(&(image.id.clone(), question.to_owned())) {
            return Ok(*p);
        }
        Ok(unit_from_digest(&keyed(self.seed, &["vqa", &image.digest, question])))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FakeCaptioner {
    seed: u64,
    table: HashMap<String, String>,
}

impl FakeCaptioner {
    pub fn new(seed: u64) -> Self {
        Self { seed, table: HashMap::new() }
    }

    pub fn with(mut self, image_id: &str, caption: &str) -> Self {
        self.table.insert(image_id.to_owned(), caption.to_owned());
        self
    }
}

const CAPTION_WORDS: [&str; 12] = [
    "a", "photo", "of", "room", "table", "chair", "with", "dog", "street", "red", "small", "near",
];

impl Captioner for FakeCaptioner {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendRole::Captioner, "fake", format!("fake-captioner-{}", self.seed))
    }

    fn caption(&self, image: &ImageRef) -> BackendResult<String> {
        if let Some(c) = self.table.get(&image.id) {
            return Ok(c.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv64(&keyed(self.seed, &["caption", &image.digest])));
        let len = rng.gen_range(4..9);
        let words: Vec<&str> = (0..len).map(|_| CAPTION_WORDS[rng.gen_range(0..CAPTION_WORDS.len())]).collect();
        Ok(words.join(" "))
    }
}

/// Unit vectors from lookup tables, or seeded pseudo-random directions.
#[derive(Debug, Clone)]
pub struct FakeEmbedder {
    seed: u64,
    dim: usize,
    texts: HashMap<String, Vec<f64>>,
    images: HashMap<String, Vec<f64>>,
}

impl FakeEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim: dim.max(1), texts: HashMap::new(), images: HashMap::new() }
    }

    pub fn with_text(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.texts.insert(text.to_owned(), normalize(vector));
        self
    }

    pub fn with_image(mut self, image_id: &str, vector: Vec<f64>) -> Self {
        self.images.insert(image_id.to_owned(), normalize(vector));
        self
    }

    fn random_unit(&self, parts: &[&str]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv64(&keyed(self.seed, parts)));
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().any(|x| *x != 0.0) {
                return normalize(v);
            }
        }
    }
}

impl Embedder for FakeEmbedder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(
            BackendRole::Embedder,
            "fake",
            format!("fake-embedder-{}-d{}", self.seed, self.dim),
        )
    }

    fn embed_text(&self, text: &str) -> BackendResult<Vec<f64>> {
        Ok(self.texts.get(text).cloned().unwrap_or_else(|| self.random_unit(&["text", text])))
    }

    fn embed_image(&self, image: &ImageRef) -> BackendResult<Vec<f64>> {
        Ok(self
            .images
            .get(&image.id)
            .cloned()
            .unwrap_or_else(|| self.random_unit(&["image", &image.digest])))
    }
}

/// Returns the detections seeded for an image id, none otherwise.
#[derive(Debug, Clone, Default)]
pub struct FakeDetector {
    frames: HashMap<String, Vec<Detection>>,
}

impl FakeDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, image_id: &str, detections: Vec<Detection>) -> Self {
        self.frames.insert(image_id.to_owned(), detections);
        self
    }

    /// Detector replay from detection JSON lines.
    pub fn from_frames(frames: impl IntoIterator<Item = DetectionFrame>) -> Self {
        Self { frames: frames.into_iter().map(|f| (f.image_id, f.detections)).collect() }
    }
}

impl Detector for FakeDetector {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendRole::Detector, "fake", "fake-detector")
    }

    fn detect(&self, image: &ImageRef) -> BackendResult<Vec<Detection>> {
        Ok(self.frames.get(&image.id).cloned().unwrap_or_default())
    }
}

type Responder = Arc<dyn Fn(&ImageRef, &[String]) -> String + Send + Sync>;

/// Chat fake. Without a responder, turns mentioning a score get a JSON answer
/// with a hash-derived score; other turns get a short description.
#[derive(Clone)]
pub struct FakeChat {
    seed: u64,
    responder: Option<Responder>,
}

impl FakeChat {
    pub fn new(seed: u64) -> Self {
        Self { seed, responder: None }
    }

    pub fn with_responder(
        seed: u64,
        responder: impl Fn(&ImageRef, &[String]) -> String + Send + Sync + 'static,
    ) -> Self {
        Self { seed, responder: Some(Arc::new(responder)) }
    }
}

impl ChatBackend for FakeChat {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendRole::MllmChat, "fake", format!("fake-chat-{}", self.seed))
    }

    fn chat(&self, image: &ImageRef, turns: &[String]) -> BackendResult<String> {
        if let Some(r) = &self.responder {
            return Ok(r(image, turns));
        }
        let last = turns.last().map(String::as_str).unwrap_or_default();
        let history = turns.join("\u{1f}");
        let u = unit_from_digest(&keyed(self.seed, &["chat", &image.digest, &history]));
        if last.contains("score") {
            let score = (u * 100.0).round() as u32;
            Ok(format!(r#"{{"score": {score}, "explanation": "synthetic judgement"}}"#))
        } else {
            Ok(format!("The image shows a scene ({}).", &image.digest[..8.min(image.digest.len())]))
        }
    }
}

/// Images whose identity depends only on (model, prompt, seed, index).
#[derive(Debug, Clone)]
pub struct FakeGenerator {
    model: String,
    width: u32,
    height: u32,
}

impl FakeGenerator {
    pub fn new(width: u32, height: u32) -> Self {
        Self { model: "fake-generator".into(), width, height }
    }

    pub fn named(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

impl Generator for FakeGenerator {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendRole::Generator, "fake", self.model.clone())
    }

    fn generate(&self, prompt: &str, seed: u64, n: usize) -> BackendResult<Vec<ImageRef>> {
        Ok((0..n)
            .map(|i| {
                let digest = sha256_hex(&keyed(seed, &[&self.model, prompt, &i.to_string()]));
                ImageRef {
                    id: format!("img-{}", &digest[..16]),
                    path: None,
                    digest,
                    width: self.width,
                    height: self.height,
                }
            })
            .collect())
    }
}
