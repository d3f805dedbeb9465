//! Contracts for the pretrained models the metrics call.
//!
//! Real model adapters live outside this crate and implement these traits.
//! The crate ships deterministic fakes, a serialization lane for adapters
//! that cannot take concurrent calls, and a replay cache that records and
//! replays responses keyed by request digest.

mod fake;
mod replay;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Detection;
use crate::util::sha256_hex;

pub use fake::{FakeCaptioner, FakeChat, FakeDetector, FakeEmbedder, FakeGenerator, FakeVqa};
pub use replay::{request_digest, CacheEntry, Offline, ReplayCache, ReplayMode, Replayed};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{role} backend unavailable: {message}")]
    Transport { role: BackendRole, message: String },
    #[error("replay miss for {role} `{model}` request {digest}")]
    ReplayMiss { role: BackendRole, model: String, digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay cache: {0}")]
    Cache(String),
}

pub type BackendResult<T> = Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Vqa,
    Captioner,
    Embedder,
    Detector,
    MllmChat,
    Generator,
}

impl std::fmt::Display for BackendRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BackendRole::Vqa => "vqa",
            BackendRole::Captioner => "captioner",
            BackendRole::Embedder => "embedder",
            BackendRole::Detector => "detector",
            BackendRole::MllmChat => "mllm_chat",
            BackendRole::Generator => "generator",
        };
        f.write_str(s)
    }
}

/// Which model sits behind a role; recorded in every run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub role: BackendRole,
    pub implementation: String,
    pub model: String,
    /// The adapter cannot take concurrent calls.
    #[serde(default)]
    pub serialized: bool,
}

impl BackendDescriptor {
    pub fn new(role: BackendRole, implementation: impl Into<String>, model: impl Into<String>) -> Self {
        Self { role, implementation: implementation.into(), model: model.into(), serialized: false }
    }

    /// Model identifiers of the reference evaluation setup.
    pub fn reference(role: BackendRole) -> Self {
        let model = match role {
            BackendRole::Vqa | BackendRole::Captioner => "blip-vit-b-capfilt-l",
            BackendRole::Embedder => "clip-vit-b-32",
            BackendRole::Detector => "unidet-Unified_learned_COIM_RS200_6x+2x",
            BackendRole::MllmChat => "minigpt4-vicuna-13b-t0.7-beam1",
            BackendRole::Generator => "stable-diffusion-2",
        };
        Self::new(role, "external", model)
    }
}

/// A generated or supplied image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Hex SHA-256 of the image bytes.
    pub digest: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    pub fn from_bytes(id: impl Into<String>, bytes: &[u8], width: u32, height: u32) -> Self {
        Self { id: id.into(), path: None, digest: sha256_hex(bytes), width, height }
    }

    pub fn from_file(
        id: impl Into<String>,
        path: &Path,
        width: u32,
        height: u32,
    ) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            id: id.into(),
            path: Some(path.to_path_buf()),
            digest: sha256_hex(&bytes),
            width,
            height,
        })
    }
}

pub trait VqaBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    /// Probability that the answer to `question` about `image` is "yes".
    fn yes_probability(&self, image: &ImageRef, question: &str) -> BackendResult<f64>;
}

pub trait Captioner: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn caption(&self, image: &ImageRef) -> BackendResult<String>;
}

/// Joint text/image embedding space. Returned vectors have unit norm.
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn embed_text(&self, text: &str) -> BackendResult<Vec<f64>>;
    fn embed_image(&self, image: &ImageRef) -> BackendResult<Vec<f64>>;
}

pub trait Detector: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    /// Boxes lie within the image bounds.
    fn detect(&self, image: &ImageRef) -> BackendResult<Vec<Detection>>;
}

/// Multimodal chat. Stateless: every call carries the full turn history,
/// alternating user and assistant turns and ending with a user turn.
pub trait ChatBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn chat(&self, image: &ImageRef, turns: &[String]) -> BackendResult<String>;
}

pub trait Generator: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    /// `n` images for `prompt`; image `i` depends only on (prompt, seed, i).
    fn generate(&self, prompt: &str, seed: u64, n: usize) -> BackendResult<Vec<ImageRef>>;
}

macro_rules! forward_arc {
    ($trait:ident { $($method:ident ( $($arg:ident : $ty:ty),* ) -> $ret:ty;)* }) => {
        impl<T: $trait + ?Sized> $trait for Arc<T> {
            fn descriptor(&self) -> BackendDescriptor {
                (**self).descriptor()
            }
            $(fn $method(&self, $($arg: $ty),*) -> $ret {
                (**self).$method($($arg),*)
            })*
        }
    };
}

forward_arc!(VqaBackend { yes_probability(image: &ImageRef, question: &str) -> BackendResult<f64>; });
forward_arc!(Captioner { caption(image: &ImageRef) -> BackendResult<String>; });
forward_arc!(Embedder {
    embed_text(text: &str) -> BackendResult<Vec<f64>>;
    embed_image(image: &ImageRef) -> BackendResult<Vec<f64>>;
});
forward_arc!(Detector { detect(image: &ImageRef) -> BackendResult<Vec<Detection>>; });
forward_arc!(ChatBackend { chat(image: &ImageRef, turns: &[String]) -> BackendResult<String>; });
forward_arc!(Generator { generate(prompt: &str, seed: u64, n: usize) -> BackendResult<Vec<ImageRef>>; });

/// Funnels every call through one lock, for adapters that declare
/// `serialized` access.
pub struct SerialLane<B> {
    inner: B,
    lock: Mutex<()>,
}

impl<B> SerialLane<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, lock: Mutex::new(()) }
    }
}

macro_rules! forward_lane {
    ($trait:ident { $($method:ident ( $($arg:ident : $ty:ty),* ) -> $ret:ty;)* }) => {
        impl<B: $trait> $trait for SerialLane<B> {
            fn descriptor(&self) -> BackendDescriptor {
                self.inner.descriptor()
            }
            $(fn $method(&self, $($arg: $ty),*) -> $ret {
                let _guard = self.lock.lock();
                self.inner.$method($($arg),*)
            })*
        }
    };
}

forward_lane!(VqaBackend { yes_probability(image: &ImageRef, question: &str) -> BackendResult<f64>; });
forward_lane!(Captioner { caption(image: &ImageRef) -> BackendResult<String>; });
forward_lane!(Embedder {
    embed_text(text: &str) -> BackendResult<Vec<f64>>;
    embed_image(image: &ImageRef) -> BackendResult<Vec<f64>>;
});
forward_lane!(Detector { detect(image: &ImageRef) -> BackendResult<Vec<Detection>>; });
forward_lane!(ChatBackend { chat(image: &ImageRef, turns: &[String]) -> BackendResult<String>; });
forward_lane!(Generator { generate(prompt: &str, seed: u64, n: usize) -> BackendResult<Vec<ImageRef>>; });

/// One backend per role.
#[derive(Clone)]
pub struct Backends {
    pub vqa: Arc<dyn VqaBackend>,
    pub captioner: Arc<dyn Captioner>,
    pub embedder: Arc<dyn Embedder>,
    pub detector: Arc<dyn Detector>,
    pub chat: Arc<dyn ChatBackend>,
    pub generator: Arc<dyn Generator>,
}

impl Backends {
    /// Deterministic fakes for every role.
    pub fn fake(seed: u64) -> Self {
        Self {
            vqa: Arc::new(FakeVqa::new(seed)),
            captioner: Arc::new(FakeCaptioner::new(seed)),
            embedder: Arc::new(FakeEmbedder::new(seed, 64)),
            detector: Arc::new(FakeDetector::new()),
            chat: Arc::new(FakeChat::new(seed)),
            generator: Arc::new(FakeGenerator::new(512, 512)),
        }
    }

    pub fn descriptors(&self) -> Vec<BackendDescriptor> {
        vec![
            self.vqa.descriptor(),
            self.captioner.descriptor(),
            self.embedder.descriptor(),
            self.detector.descriptor(),
            self.chat.descriptor(),
            self.generator.descriptor(),
        ]
    }

    /// Wraps every backend that declares serialized access in a [`SerialLane`].
    pub fn with_lanes(mut self) -> Self {
        if self.vqa.descriptor().serialized {
            self.vqa = Arc::new(SerialLane::new(self.vqa));
        }
        if self.captioner.descriptor().serialized {
            self.captioner = Arc::new(SerialLane::new(self.captioner));
        }
        if self.embedder.descriptor().serialized {
            self.embedder = Arc::new(SerialLane::new(self.embedder));
        }
        if self.detector.descriptor().serialized {
            self.detector = Arc::new(SerialLane::new(self.detector));
        }
        if self.chat.descriptor().serialized {
            self.chat = Arc::new(SerialLane::new(self.chat));
        }
        if self.generator.descriptor().serialized {
            self.generator = Arc::new(SerialLane::new(self.generator));
        }
        self
    }

    /// Routes every backend through `cache`. In record mode misses are
    /// answered by the wrapped backend and appended.
    pub fn replayed(self, cache: Arc<ReplayCache>, mode: ReplayMode) -> Self {
        Self {
            vqa: Arc::new(Replayed::new(self.vqa, cache.clone(), mode)),
            captioner: Arc::new(Replayed::new(self.captioner, cache.clone(), mode)),
            embedder: Arc::new(Replayed::new(self.embedder, cache.clone(), mode)),
            detector: Arc::new(Replayed::new(self.detector, cache.clone(), mode)),
            chat: Arc::new(Replayed::new(self.chat, cache.clone(), mode)),
            generator: Arc::new(Replayed::new(self.generator, cache, mode)),
        }
    }

    /// Strict replay with no live backend behind the cache. Descriptors come
    /// from the recorded run; roles without one get a placeholder that always
    /// misses.
    pub fn strict_replay(descriptors: &[BackendDescriptor], cache: Arc<ReplayCache>) -> Self {
        let offline = |role: BackendRole| {
            let descriptor = descriptors
                .iter()
                .find(|d| d.role == role)
                .cloned()
                .unwrap_or_else(|| BackendDescriptor::new(role, "offline", "unrecorded"));
            Replayed::new(Offline::new(descriptor), cache.clone(), ReplayMode::Strict)
        };
        Self {
            vqa: Arc::new(offline(BackendRole::Vqa)),
            captioner: Arc::new(offline(BackendRole::Captioner)),
            embedder: Arc::new(offline(BackendRole::Embedder)),
            detector: Arc::new(offline(BackendRole::Detector)),
            chat: Arc::new(offline(BackendRole::MllmChat)),
            generator: Arc::new(offline(BackendRole::Generator)),
        }
    }
}

/// Scales `v` to unit length; the zero vector is returned unchanged.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_digest_is_stable() {
        let a = ImageRef::from_bytes("a", b"pixels", 4, 4);
        let b = ImageRef::from_bytes("b", b"pixels", 4, 4);
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, ImageRef::from_bytes("c", b"other", 4, 4).digest);
    }

    #[test]
    fn lanes_wrap_only_serialized_backends() {
        struct Slow;
        impl VqaBackend for Slow {
            fn descriptor(&self) -> BackendDescriptor {
                BackendDescriptor { serialized: true, ..BackendDescriptor::new(BackendRole::Vqa, "slow", "m") }
            }
            fn yes_probability(&self, _: &ImageRef, _: &str) -> BackendResult<f64> {
                Ok(0.25)
            }
        }
        let mut backends = Backends::fake(1);
        backends.vqa = Arc::new(Slow);
        let laned = backends.with_lanes();
        let img = ImageRef::from_bytes("i", b"x", 1, 1);
        assert_eq!(laned.vqa.yes_probability(&img, "a cat?").unwrap(), 0.25);
        assert_eq!(laned.descriptors().len(), 6);
    }
}
