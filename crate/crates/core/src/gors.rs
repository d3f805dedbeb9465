//! Reward-driven sample selection and the reward-weighted denoising loss.
//!
//! Samples are generated per prompt, scored by the category's reward metric,
//! and kept when their reward exceeds the category threshold. The selected
//! set is handed to an external trainer through a [`TrainingManifest`].

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backends, Generator, ImageRef};
use crate::metrics::{self, EvalConfig, MetricError, MetricKind, MetricResult};
use crate::suite::{Category, PromptRecord};
use crate::util::seeded_rng;

#[derive(Debug, Error)]
pub enum GorsError {
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("shape mismatch: noise has {noise} values, prediction {predicted}")]
    Shape { noise: usize, predicted: usize },
    #[error("reward {0} outside [0, 1]")]
    Reward(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no samples selected")]
    EmptySelection,
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type GorsResult<T> = Result<T, GorsError>;

/// One generated image with its reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub prompt_id: String,
    pub prompt: String,
    pub category: Category,
    pub image: ImageRef,
    pub reward: f64,
    pub reward_metric: MetricKind,
}

/// Threshold variants used in ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdAblation {
    #[default]
    Full,
    Half,
    Zero,
}

impl ThresholdAblation {
    pub fn factor(self) -> f64 {
        match self {
            ThresholdAblation::Full => 1.0,
            ThresholdAblation::Half => 0.5,
            ThresholdAblation::Zero => 0.0,
        }
    }
}

/// Which parts of the generator the low-rank adapters are attached to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationScope {
    #[default]
    Both,
    TextEncoderOnly,
    UnetOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k_per_prompt: usize,
    /// Seed passed to the generator.
    pub seed: u64,
    /// Explicit per-category thresholds. Missing categories use the median
    /// reward of the samples being selected from.
    #[serde(default)]
    pub thresholds: BTreeMap<Category, f64>,
    #[serde(default)]
    pub reward_metrics: BTreeMap<Category, MetricKind>,
    #[serde(default)]
    pub ablation: ThresholdAblation,
    #[serde(default)]
    pub adaptation: AdaptationScope,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_per_prompt: 10,
            seed: 0,
            thresholds: BTreeMap::new(),
            reward_metrics: Category::ALL.into_iter().map(|c| (c, default_reward_metric(c))).collect(),
            ablation: ThresholdAblation::Full,
            adaptation: AdaptationScope::Both,
        }
    }
}

pub fn default_reward_metric(category: Category) -> MetricKind {
    match category {
        Category::Color | Category::Shape | Category::Texture => MetricKind::BVqa,
        Category::Spatial => MetricKind::Unidet,
        Category::NonSpatial => MetricKind::Clip,
        Category::Complex => MetricKind::ThreeInOne,
    }
}

impl SelectionConfig {
    pub fn check(&self) -> GorsResult<()> {
        if self.k_per_prompt == 0 {
            return Err(GorsError::Config("k_per_prompt must be at least 1".into()));
        }
        for (c, t) in &self.thresholds {
            if !(0.0..=1.0).contains(t) {
                return Err(GorsError::Config(format!("{c} threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn reward_metric(&self, category: Category) -> MetricKind {
        self.reward_metrics.get(&category).copied().unwrap_or_else(|| default_reward_metric(category))
    }

    pub fn with_threshold(mut self, category: Category, threshold: f64) -> Self {
        self.thresholds.insert(category, threshold);
        self
    }

    pub fn with_ablation(mut self, ablation: ThresholdAblation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Effective thresholds for the categories present in `samples`, after
    /// the ablation factor.
    pub fn resolve_thresholds(&self, samples: &[Sample]) -> BTreeMap<Category, f64> {
        let mut rewards: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
        for s in samples {
            rewards.entry(s.category).or_default().push(s.reward);
        }
        rewards
            .into_iter()
            .map(|(c, mut r)| {
                let base = self.thresholds.get(&c).copied().unwrap_or_else(|| median(&mut r));
                (c, base * self.ablation.factor())
            })
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Scores one image with a named metric.
pub trait RewardModel: Sync {
    fn reward(&self, metric: MetricKind, image: &ImageRef, record: &PromptRecord) -> MetricResult<f64>;
}

impl<F> RewardModel for F
where
    F: Fn(MetricKind, &ImageRef, &PromptRecord) -> MetricResult<f64> + Sync,
{
    fn reward(&self, metric: MetricKind, image: &ImageRef, record: &PromptRecord) -> MetricResult<f64> {
        self(metric, image, record)
    }
}

/// Rewards from the metric engine.
pub struct EngineReward<'a> {
    pub backends: &'a Backends,
    pub config: &'a EvalConfig,
}

impl RewardModel for EngineReward<'_> {
    fn reward(&self, metric: MetricKind, image: &ImageRef, record: &PromptRecord) -> MetricResult<f64> {
        Ok(metrics::score(metric, image, record, self.backends, self.config)?.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub prompt_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub samples: Vec<Sample>,
    pub failures: Vec<PromptFailure>,
}

fn prompt_samples(
    record: &PromptRecord,
    generator: &dyn Generator,
    reward: &dyn RewardModel,
    cfg: &SelectionConfig,
) -> Result<Vec<Sample>, String> {
    let images = generator
        .generate(&record.text, cfg.seed, cfg.k_per_prompt)
        .map_err(|e| MetricError::from(e).to_string())?;
    if images.len() != cfg.k_per_prompt {
        return Err(format!("generator returned {} images, expected {}", images.len(), cfg.k_per_prompt));
    }
    let metric = cfg.reward_metric(record.category);
    images
        .into_iter()
        .map(|image| {
            let r = reward.reward(metric, &image, record).map_err(|e| e.to_string())?;
            if !(0.0..=1.0).contains(&r) {
                return Err(GorsError::Reward(r).to_string());
            }
            Ok(Sample {
                prompt_id: record.id.clone(),
                prompt: record.text.clone(),
                category: record.category,
                image,
                reward: r,
                reward_metric: metric,
            })
        })
        .collect()
}

/// Generates `k` images per prompt and scores each with the category reward
/// metric. Prompts whose generation or scoring fails are skipped and listed.
pub fn generate_and_score(
    records: &[PromptRecord],
    generator: &dyn Generator,
    reward: &dyn RewardModel,
    cfg: &SelectionConfig,
) -> GorsResult<Generation> {
    cfg.check()?;
    let results: Vec<Result<Vec<Sample>, String>> =
        records.par_iter().map(|r| prompt_samples(r, generator, reward, cfg)).collect();
    let mut out = Generation::default();
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok(samples) => out.samples.extend(samples),
            Err(reason) => out.failures.push(PromptFailure { prompt_id: record.id.clone(), reason }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub samples: Vec<Sample>,
    /// Thresholds actually applied, per category.
    pub thresholds: BTreeMap<Category, f64>,
    pub ablation: ThresholdAblation,
    pub considered: usize,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Keeps samples whose reward is strictly above their category threshold.
pub fn select(samples: &[Sample], cfg: &SelectionConfig) -> Selection {
    let thresholds = cfg.resolve_thresholds(samples);
    Selection {
        samples: select_with(samples, &thresholds),
        thresholds,
        ablation: cfg.ablation,
        considered: samples.len(),
    }
}

/// Selection against fixed thresholds; categories without one keep nothing.
pub fn select_with(samples: &[Sample], thresholds: &BTreeMap<Category, f64>) -> Vec<Sample> {
    samples
        .iter()
        .filter(|s| thresholds.get(&s.category).is_some_and(|t| s.reward > *t))
        .cloned()
        .collect()
}

/// One reward-weighted denoising term: latent `z_t` at timestep
/// `t` with conditioning text `y`, true noise and predicted noise, reward `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseItem {
    pub latent: Vec<f64>,
    pub timestep: u32,
    pub text: String,
    pub noise: Vec<f64>,
    pub predicted: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoiseBatch {
    pub items: Vec<DenoiseItem>,
}

fn squared_residual(noise: &[f64], predicted: &[f64]) -> GorsResult<f64> {
    if noise.len() != predicted.len() {
        return Err(GorsError::Shape { noise: noise.len(), predicted: predicted.len() });
    }
    Ok(noise.iter().zip(predicted).map(|(e, p)| (e - p) * (e - p)).sum())
}

/// Mean over items of `s * ||noise - predicted||^2`.
pub fn weighted_denoise_loss(batch: &DenoiseBatch) -> GorsResult<f64> {
    if batch.items.is_empty() {
        return Err(GorsError::EmptyBatch);
    }
    let mut total = 0.0;
    for item in &batch.items {
        if !(0.0..=1.0).contains(&item.reward) {
            return Err(GorsError::Reward(item.reward));
        }
        total += item.reward * squared_residual(&item.noise, &item.predicted)?;
    }
    Ok(total / batch.items.len() as f64)
}

/// Training input for [`ToyDenoiser`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyItem {
    pub latent: Vec<f64>,
    pub timestep: u32,
    pub text: String,
    pub noise: Vec<f64>,
    pub reward: f64,
}

/// `eps(z, t, y) = tanh(W z + U e(y) + b + c t/1000)` with `e(y)` a fixed
/// pseudo-random text embedding. Small enough to check gradients by finite
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub dim: usize,
    pub cond_dim: usize,
    /// Row-major W (dim x dim), U (dim x cond_dim), b (dim), c (dim).
    pub params: Vec<f64>,
}

impl ToyDenoiser {
    pub fn new(dim: usize, cond_dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, "toy-denoiser");
        let n = dim * dim + dim * cond_dim + 2 * dim;
        let params = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Self { dim, cond_dim, params }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut rng = seeded_rng(0, text);
        (0..self.cond_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let u = self.dim * self.dim;
        let b = u + self.dim * self.cond_dim;
        (u, b, b + self.dim)
    }

    fn pre_activation(&self, latent: &[f64], timestep: u32, cond: &[f64]) -> Vec<f64> {
        let (u0, b0, c0) = self.offsets();
        let tau = f64::from(timestep) / 1000.0;
        (0..self.dim)
            .map(|i| {
                let wz: f64 = (0..self.dim).map(|j| self.params[i * self.dim + j] * latent[j]).sum();
                let ue: f64 = (0..self.cond_dim).map(|k| self.params[u0 + i * self.cond_dim + k] * cond[k]).sum();
                wz + ue + self.params[b0 + i] + self.params[c0 + i] * tau
            })
            .collect()
    }

    pub fn predict(&self, latent: &[f64], timestep: u32, text: &str) -> Vec<f64> {
        let cond = self.embed_text(text);
        self.pre_activation(latent, timestep, &cond).into_iter().map(f64::tanh).collect()
    }

    fn check_item(&self, item: &ToyItem) -> GorsResult<()> {
        if item.latent.len() != self.dim {
            return Err(GorsError::Shape { noise: self.dim, predicted: item.latent.len() });
        }
        if item.noise.len() != self.dim {
            return Err(GorsError::Shape { noise: item.noise.len(), predicted: self.dim });
        }
        Ok(())
    }

    pub fn batch(&self, items: &[ToyItem]) -> GorsResult<DenoiseBatch> {
        let items = items
            .iter()
            .map(|it| {
                self.check_item(it)?;
                Ok(DenoiseItem {
                    latent: it.latent.clone(),
                    timestep: it.timestep,
                    text: it.text.clone(),
                    noise: it.noise.clone(),
                    predicted: self.predict(&it.latent, it.timestep, &it.text),
                    reward: it.reward,
                })
            })
            .collect::<GorsResult<Vec<_>>>()?;
        Ok(DenoiseBatch { items })
    }

    pub fn loss(&self, items: &[ToyItem]) -> GorsResult<f64> {
        weighted_denoise_loss(&self.batch(items)?)
    }

    /// Analytic gradient of [`ToyDenoiser::loss`] with respect to `params`.
    pub fn gradient(&self, items: &[ToyItem]) -> GorsResult<Vec<f64>> {
        if items.is_empty() {
            return Err(GorsError::EmptyBatch);
        }
        let (u0, b0, c0) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / items.len() as f64;
        for item in items {
            self.check_item(item)?;
            let cond = self.embed_text(&item.text);
            let tau = f64::from(item.timestep) / 1000.0;
            let pre = self.pre_activation(&item.latent, item.timestep, &cond);
            for i in 0..self.dim {
                let p = pre[i].tanh();
                let delta = scale * item.reward * 2.0 * (p - item.noise[i]) * (1.0 - p * p);
                for j in 0..self.dim {
                    grad[i * self.dim + j] += delta * item.latent[j];
                }
                for k in 0..self.cond_dim {
                    grad[u0 + i * self.cond_dim + k] += delta * cond[k];
                }
                grad[b0 + i] += delta;
                grad[c0 + i] += delta * tau;
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub name: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTarget {
    pub module: String,
    pub layers: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    /// `mean_i s_i * ||eps_i - eps_theta(z_t, t, y)_i||^2`
    pub kind: String,
    /// Rewards are used as raw metric values.
    pub weighting: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub samples: Vec<Sample>,
    pub thresholds: BTreeMap<Category, f64>,
    pub ablation: ThresholdAblation,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub min_steps: u64,
    pub max_steps: u64,
    pub adaptation: Vec<AdaptationTarget>,
}

impl TrainingManifest {
    pub fn to_json(&self) -> GorsResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| GorsError::Manifest(e.to_string()))
    }

    pub fn from_json(text: &str) -> GorsResult<Self> {
        serde_json::from_str(text).map_err(|e| GorsError::Manifest(e.to_string()))
    }
}

pub fn build_manifest(selection: &Selection, cfg: &SelectionConfig) -> GorsResult<TrainingManifest> {
    if selection.is_empty() {
        return Err(GorsError::EmptySelection);
    }
    let lora = |module: &str, layers: &str| AdaptationTarget {
        module: module.into(),
        layers: layers.into(),
        method: "lora".into(),
    };
    let adaptation = match cfg.adaptation {
        AdaptationScope::Both => vec![lora("text_encoder", "self_attention"), lora("unet", "attention")],
        AdaptationScope::TextEncoderOnly => vec![lora("text_encoder", "self_attention")],
        AdaptationScope::UnetOnly => vec![lora("unet", "attention")],
    };
    Ok(TrainingManifest {
        samples: selection.samples.clone(),
        thresholds: selection.thresholds.clone(),
        ablation: selection.ablation,
        loss: LossSpec {
            kind: "reward_weighted_denoising_mse".into(),
            weighting: "raw_reward".into(),
        },
        optimizer: OptimizerSpec {
            name: "adamw".into(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        },
        batch_size: 5,
        min_steps: 50_000,
        max_steps: 100_000,
        adaptation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FakeGenerator;
    use crate::suite::{Novelty, Source, Split};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn record(id: &str, category: Category) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            category,
            split: Split::Train,
            novelty: Novelty::NotApplicable,
            text: format!("prompt {id}"),
            objects: vec![],
            relations: vec![],
            source: Source::Chatgpt,
            structure_missing: false,
        }
    }

    fn sample(reward: f64, category: Category) -> Sample {
        Sample {
            prompt_id: "p".into(),
            prompt: "p".into(),
            category,
            image: ImageRef::from_bytes(format!("{reward}"), b"x", 8, 8),
            reward,
            reward_metric: default_reward_metric(category),
        }
    }

    fn half(_: MetricKind, _: &ImageRef, _: &PromptRecord) -> MetricResult<f64> {
        Ok(0.5)
    }

    #[test]
    fn generates_k_per_prompt() {
        let records: Vec<_> = (0..3).map(|i| record(&format!("p{i}"), Category::NonSpatial)).collect();
        let generator = FakeGenerator::new(64, 64);
        let cfg = SelectionConfig::default();
        let g = generate_and_score(&records, &generator, &half, &cfg).unwrap();
        assert_eq!(g.samples.len(), 30);
        assert!(g.samples.iter().all(|s| s.reward == 0.5 && s.reward_metric == MetricKind::Clip));
        assert_eq!(g, generate_and_score(&records, &generator, &half, &cfg).unwrap());
    }

    #[test]
    fn failing_prompts_are_skipped() {
        let records = vec![record("a", Category::Color), record("b", Category::Color)];
        let flaky = |_: MetricKind, _: &ImageRef, r: &PromptRecord| {
            if r.id == "a" {
                Err(MetricError::StructureMissing { prompt_id: r.id.clone() })
            } else {
                Ok(0.1)
            }
        };
        let g = generate_and_score(&records, &FakeGenerator::new(8, 8), &flaky, &SelectionConfig::default()).unwrap();
        assert_eq!(g.samples.len(), 10);
        assert_eq!(g.failures.len(), 1);
        assert_eq!(g.failures[0].prompt_id, "a");
    }

    #[test]
    fn selection_rules() {
        let samples = vec![sample(0.9, Category::Color), sample(0.3, Category::Color)];
        let cfg = SelectionConfig::default().with_threshold(Category::Color, 0.5);
        let s = select(&samples, &cfg);
        assert_eq!(s.samples.len(), 1);
        assert_eq!(s.samples[0].reward, 0.9);

        let zero = select(&[sample(0.0, Category::Color), sample(0.2, Category::Color)], &cfg.clone().with_ablation(ThresholdAblation::Zero));
        assert_eq!(zero.samples.len(), 1);
        assert_eq!(zero.thresholds[&Category::Color], 0.0);

        let all = SelectionConfig::default().with_threshold(Category::Color, 1.0);
        assert!(select(&[sample(1.0, Category::Color)], &all).is_empty());
    }

    #[test]
    fn default_threshold_is_the_median() {
        let samples: Vec<_> = [0.1, 0.2, 0.3, 0.4].iter().map(|r| sample(*r, Category::Spatial)).collect();
        let s = select(&samples, &SelectionConfig::default());
        assert_relative_eq!(s.thresholds[&Category::Spatial], 0.25, epsilon = 1e-12);
        assert_eq!(s.samples.len(), 2);
        let h = select(&samples, &SelectionConfig::default().with_ablation(ThresholdAblation::Half));
        assert_relative_eq!(h.thresholds[&Category::Spatial], 0.125, epsilon = 1e-12);
    }

    #[test]
    fn loss_examples() {
        let item = |reward: f64, noise: Vec<f64>, predicted: Vec<f64>| DenoiseItem {
            latent: vec![0.0; noise.len()],
            timestep: 10,
            text: "t".into(),
            noise,
            predicted,
            reward,
        };
        let b = |items| DenoiseBatch { items };
        assert_eq!(weighted_denoise_loss(&b(vec![item(0.0, vec![1.0, 2.0], vec![5.0, -1.0])])).unwrap(), 0.0);
        assert_eq!(weighted_denoise_loss(&b(vec![item(0.7, vec![1.0, 2.0], vec![1.0, 2.0])])).unwrap(), 0.0);
        // residual (0.6, 0.2): squared norm 0.4
        let l = weighted_denoise_loss(&b(vec![item(0.5, vec![0.6, 0.2], vec![0.0, 0.0])])).unwrap();
        assert_relative_eq!(l, 0.2, epsilon = 1e-12);
        assert!(matches!(
            weighted_denoise_loss(&b(vec![item(0.5, vec![1.0], vec![1.0, 2.0])])),
            Err(GorsError::Shape { .. })
        ));
    }

    fn toy_items(n: usize, dim: usize, reward: f64) -> Vec<ToyItem> {
        let mut rng = seeded_rng(9, "items");
        (0..n)
            .map(|i| ToyItem {
                latent: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                timestep: rng.gen_range(0..1000),
                text: format!("text {i}"),
                noise: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                reward,
            })
            .collect()
    }

    #[test]
    fn toy_gradient_matches_finite_differences() {
        let model = ToyDenoiser::new(4, 3, 1);
        let items = toy_items(5, 4, 0.7);
        let grad = model.gradient(&items).unwrap();
        let h = 1e-6;
        for p in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[p] += h;
            let mut minus = model.clone();
            minus.params[p] -= h;
            let fd = (plus.loss(&items).unwrap() - minus.loss(&items).unwrap()) / (2.0 * h);
            let denom = grad[p].abs().max(fd.abs()).max(1e-8);
            assert!((grad[p] - fd).abs() / denom < 1e-4, "param {p}: {} vs {fd}", grad[p]);
        }
    }

    #[test]
    fn manifest_roundtrips() {
        let samples = vec![sample(0.9, Category::Color), sample(0.8, Category::Color)];
        let cfg = SelectionConfig::default().with_threshold(Category::Color, 0.5).with_ablation(ThresholdAblation::Half);
        let s = select(&samples, &cfg);
        let m = build_manifest(&s, &cfg).unwrap();
        assert_eq!(m.samples.len(), 2);
        assert_eq!(m.batch_size, 5);
        assert_eq!(m.thresholds[&Category::Color], 0.25);
        assert_eq!(TrainingManifest::from_json(&m.to_json().unwrap()).unwrap(), m);
        let empty = select(&samples, &SelectionConfig::default().with_threshold(Category::Color, 1.0));
        assert!(matches!(build_manifest(&empty, &cfg), Err(GorsError::EmptySelection)));
    }

    proptest! {
        #[test]
        fn selection_is_sound_idempotent_and_monotone(
            rewards in prop::collection::vec(0.0f64..=1.0, 0..40),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let samples: Vec<_> = rewards.iter().map(|r| sample(*r, Category::Texture)).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let th = |t: f64| BTreeMap::from([(Category::Texture, t)]);
            let kept = select_with(&samples, &th(lo));
            prop_assert!(kept.iter().all(|s| s.reward > lo));
            prop_assert_eq!(select_with(&kept, &th(lo)), kept.clone());
            prop_assert!(select_with(&samples, &th(hi)).len() <= kept.len());
        }

        #[test]
        fn loss_is_linear_in_reward(s in 0.0f64..=0.5, residual in prop::collection::vec(-2.0f64..2.0, 1..8)) {
            let batch = |reward: f64| DenoiseBatch { items: vec![DenoiseItem {
                latent: vec![],
                timestep: 0,
                text: String::new(),
                noise: residual.clone(),
                predicted: vec![0.0; residual.len()],
                reward,
            }]};
            let one = weighted_denoise_loss(&batch(s)).unwrap();
            let two = weighted_denoise_loss(&batch(2.0 * s)).unwrap();
            prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two.abs().max(1.0));
            prop_assert!(one >= 0.0);
        }
    }
}
