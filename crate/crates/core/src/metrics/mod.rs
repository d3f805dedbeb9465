//! Metric engine. Every metric emits a [`MetricScore`] whose `detail` is
//! enough to recompute its value.

mod engine;
mod mllm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, Captioner, Detector, Embedder, ImageRef, VqaBackend};
use crate::geometry::{
    relation_score, Detection, GeometryConfig, NounClassMap, SpatialDiagnostic, SpatialOutcome,
};
use crate::suite::{object_phrase, ObjectSpec, PromptRecord};
use crate::util::mean;

pub use engine::{
    evaluate_suite, CategorySummary, EvalConfig, EvaluationReport, ImageIndex, IndexEntry,
    ScoreKey, ScoreStore, SkippedScore, Summary,
};
pub use mllm::{mgpt_cot_score, mgpt_score, parse_score, CotPromptSet, CotTemplate};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{prompt_id}: prompt has no structured metadata")]
    StructureMissing { prompt_id: String },
    #[error("{metric} does not apply to {prompt_id}: {reason}")]
    Inapplicable { metric: MetricKind, prompt_id: String, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

impl MetricError {
    /// True for errors that mean "skip this score" rather than "stop".
    pub fn is_inapplicable(&self) -> bool {
        matches!(self, MetricError::StructureMissing { .. } | MetricError::Inapplicable { .. })
    }
}

pub type MetricResult<T> = Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    BVqa,
    Clip,
    BClip,
    Unidet,
    ThreeInOne,
    Mgpt,
    MgptCot,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Clip,
        MetricKind::BClip,
        MetricKind::BVqa,
        MetricKind::Unidet,
        MetricKind::ThreeInOne,
        MetricKind::Mgpt,
        MetricKind::MgptCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::BVqa => "b_vqa",
            MetricKind::Clip => "clip",
            MetricKind::BClip => "b_clip",
            MetricKind::Unidet => "unidet",
            MetricKind::ThreeInOne => "three_in_one",
            MetricKind::Mgpt => "mgpt",
            MetricKind::MgptCot => "mgpt_cot",
        }
    }

    /// Parses a comma-separated metric list.
    pub fn parse_list(s: &str) -> MetricResult<Vec<MetricKind>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: MetricKind = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(MetricError::UnknownMetric(s.to_owned()));
        }
        Ok(out)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> MetricResult<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let alias = match key.as_str() {
            "bvqa" | "blip_vqa" => "b_vqa",
            "bclip" | "blip_clip" => "b_clip",
            "clipscore" => "clip",
            "3_in_1" | "3in1" => "three_in_one",
            "minigpt4" => "mgpt",
            "minigpt4_cot" | "mgpt4_cot" => "mgpt_cot",
            other => other,
        };
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == alias)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_owned()))
    }
}

/// One yes/no question asked of the VQA model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub object_index: usize,
}

/// How objects carrying several attributes are turned into questions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionMode {
    /// One question per object with all its attributes folded in.
    #[default]
    PerObject,
    /// One question per (attribute, noun) pair.
    PerAttribute,
}

pub fn disentangle(record: &PromptRecord) -> MetricResult<Vec<Question>> {
    disentangle_with(record, QuestionMode::PerObject)
}

pub fn disentangle_with(record: &PromptRecord, mode: QuestionMode) -> MetricResult<Vec<Question>> {
    if record.structure_missing || record.objects.is_empty() {
        return Err(MetricError::StructureMissing { prompt_id: record.id.clone() });
    }
    let mut questions = Vec::new();
    for (i, object) in record.objects.iter().enumerate() {
        let ask = |o: &ObjectSpec| Question { text: format!("{}?", object_phrase(o)), object_index: i };
        if mode == QuestionMode::PerAttribute && object.attributes.len() > 1 {
            for attr in &object.attributes {
                questions.push(ask(&ObjectSpec::new(object.noun.clone(), vec![attr.clone()])));
            }
        } else {
            questions.push(ask(object));
        }
    }
    Ok(questions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAnswer {
    pub question: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub metric: MetricKind,
    pub applicable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// One multi-turn conversation with the chat model. `turns` alternates user
/// and assistant messages and ends with the final assistant reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatQuery {
    pub turns: Vec<String>,
    /// Parsed 0-100 score of the final reply.
    pub score: Option<f64>,
    pub parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDetail {
    Vqa { answers: Vec<QuestionAnswer> },
    Cosine {
        cosine: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
    Spatial { detections: Vec<Detection>, relations: Vec<SpatialOutcome> },
    Composite { components: Vec<Component> },
    Chat { queries: Vec<ChatQuery> },
}

impl ScoreDetail {
    /// The metric value implied by this detail.
    pub fn recompute(&self) -> f64 {
        match self {
            ScoreDetail::Vqa { answers } => product(answers.iter().map(|a| a.probability)),
            ScoreDetail::Cosine { cosine, .. } => cosine.max(0.0),
            ScoreDetail::Spatial { relations, .. } => {
                let values: Vec<f64> = relations
                    .iter()
                    .map(|r| match r.diagnostic {
                        SpatialDiagnostic::Evaluated { satisfied: true, .. } => 1.0,
                        _ => 0.0,
                    })
                    .collect();
                mean(&values).unwrap_or(0.0)
            }
            ScoreDetail::Composite { components } => {
                let values: Vec<f64> =
                    components.iter().filter(|c| c.applicable).filter_map(|c| c.value).collect();
                mean(&values).unwrap_or(0.0)
            }
            ScoreDetail::Chat { queries } => {
                let values: Vec<f64> = queries.iter().map(|q| q.score.unwrap_or(0.0) / 100.0).collect();
                mean(&values).unwrap_or(0.0)
            }
        }
    }
}

/// One (metric, prompt, image) score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub prompt_id: String,
    pub image_id: String,
    pub metric: MetricKind,
    pub value: f64,
    pub detail: ScoreDetail,
}

impl MetricScore {
    fn new(record: &PromptRecord, image: &ImageRef, metric: MetricKind, detail: ScoreDetail) -> Self {
        Self {
            prompt_id: record.id.clone(),
            image_id: image.id.clone(),
            metric,
            value: detail.recompute(),
            detail,
        }
    }

    pub fn key(&self) -> ScoreKey {
        ScoreKey::new(&self.prompt_id, &self.image_id, self.metric)
    }
}

fn product(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(1.0, |acc, p| acc * p)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn bvqa_score(image: &ImageRef, record: &PromptRecord, vqa: &dyn VqaBackend) -> MetricResult<MetricScore> {
    bvqa_score_with(image, record, vqa, QuestionMode::PerObject)
}

pub fn bvqa_score_with(
    image: &ImageRef,
    record: &PromptRecord,
    vqa: &dyn VqaBackend,
    mode: QuestionMode,
) -> MetricResult<MetricScore> {
    let mut answers = Vec::new();
    for q in disentangle_with(record, mode)? {
        let probability = vqa.yes_probability(image, &q.text)?.clamp(0.0, 1.0);
        answers.push(QuestionAnswer { question: q.text, probability });
    }
    Ok(MetricScore::new(record, image, MetricKind::BVqa, ScoreDetail::Vqa { answers }))
}

pub fn clip_score(image: &ImageRef, record: &PromptRecord, embedder: &dyn Embedder) -> MetricResult<MetricScore> {
    let text = embedder.embed_text(&record.text)?;
    let img = embedder.embed_image(image)?;
    let detail = ScoreDetail::Cosine { cosine: cosine(&text, &img), caption: None };
    Ok(MetricScore::new(record, image, MetricKind::Clip, detail))
}

pub fn blip_clip_score(
    image: &ImageRef,
    record: &PromptRecord,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
) -> MetricResult<MetricScore> {
    let caption = captioner.caption(image)?;
    let c = embedder.embed_text(&caption)?;
    let t = embedder.embed_text(&record.text)?;
    let detail = ScoreDetail::Cosine { cosine: cosine(&c, &t), caption: Some(caption) };
    Ok(MetricScore::new(record, image, MetricKind::BClip, detail))
}

/// Geometry score averaged over every spatial relation of the record.
pub fn unidet_metric(
    image: &ImageRef,
    record: &PromptRecord,
    detector: &dyn Detector,
    mapping: &NounClassMap,
    cfg: &GeometryConfig,
) -> MetricResult<MetricScore> {
    if record.structure_missing {
        return Err(MetricError::StructureMissing { prompt_id: record.id.clone() });
    }
    if record.spatial_relations().next().is_none() {
        return Err(MetricError::Inapplicable {
            metric: MetricKind::Unidet,
            prompt_id: record.id.clone(),
            reason: "no spatial relation".into(),
        });
    }
    let detections = detector.detect(image)?;
    let cfg = cfg.with_image_size(image.width, image.height);
    let relations = record
        .spatial_relations()
        .map(|rel| relation_score(&detections, record, rel, mapping, &cfg))
        .collect();
    let detail = ScoreDetail::Spatial { detections, relations };
    Ok(MetricScore::new(record, image, MetricKind::Unidet, detail))
}

/// Mean of applicable sub-scores. UniDet is skipped for records without a
/// spatial relation.
pub fn combine(bvqa: f64, unidet: Option<f64>, clip: f64) -> ScoreDetail {
    ScoreDetail::Composite {
        components: vec![
            Component { metric: MetricKind::BVqa, applicable: true, value: Some(bvqa) },
            Component { metric: MetricKind::Unidet, applicable: unidet.is_some(), value: unidet },
            Component { metric: MetricKind::Clip, applicable: true, value: Some(clip) },
        ],
    }
}

pub fn three_in_one(
    image: &ImageRef,
    record: &PromptRecord,
    backends: &Backends,
    cfg: &EvalConfig,
) -> MetricResult<MetricScore> {
    let bvqa = bvqa_score_with(image, record, backends.vqa.as_ref(), cfg.question_mode)?.value;
    let unidet = if record.spatial_relations().next().is_some() {
        Some(unidet_metric(image, record, backends.detector.as_ref(), &cfg.mapping, &cfg.geometry)?.value)
    } else {
        None
    };
    let clip = clip_score(image, record, backends.embedder.as_ref())?.value;
    Ok(MetricScore::new(record, image, MetricKind::ThreeInOne, combine(bvqa, unidet, clip)))
}

/// Dispatches one metric.
pub fn score(
    metric: MetricKind,
    image: &ImageRef,
    record: &PromptRecord,
    backends: &Backends,
    cfg: &EvalConfig,
) -> MetricResult<MetricScore> {
    match metric {
        MetricKind::BVqa => bvqa_score_with(image, record, backends.vqa.as_ref(), cfg.question_mode),
        MetricKind::Clip => clip_score(image, record, backends.embedder.as_ref()),
        MetricKind::BClip => {
            blip_clip_score(image, record, backends.captioner.as_ref(), backends.embedder.as_ref())
        }
        MetricKind::Unidet => {
            unidet_metric(image, record, backends.detector.as_ref(), &cfg.mapping, &cfg.geometry)
        }
        MetricKind::ThreeInOne => three_in_one(image, record, backends, cfg),
        MetricKind::Mgpt => mgpt_score(image, record, backends.chat.as_ref()),
        MetricKind::MgptCot => mgpt_cot_score(image, record, backends.chat.as_ref(), &cfg.cot_prompts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{FakeCaptioner, FakeDetector, FakeEmbedder, FakeVqa};
    use crate::geometry::BBox;
    use crate::suite::{
        AttributeKind, AttributeSpec, Category, Novelty, RelationKind, RelationSpec, Source, Split,
    };
    use approx::assert_relative_eq;

    fn obj(noun: &str, attrs: &[&str]) -> ObjectSpec {
        ObjectSpec::new(noun, attrs.iter().map(|a| AttributeSpec::new(AttributeKind::Color, *a)).collect())
    }

    fn record(category: Category, text: &str, objects: Vec<ObjectSpec>) -> PromptRecord {
        PromptRecord {
            id: "p".into(),
            category,
            split: Split::Train,
            novelty: Novelty::NotApplicable,
            text: text.into(),
            objects,
            relations: vec![],
            source: Source::Template,
            structure_missing: false,
        }
    }

    fn img(id: &str) -> ImageRef {
        ImageRef::from_bytes(id, id.as_bytes(), 512, 512)
    }

    #[test]
    fn disentangles_per_object() {
        let r = record(
            Category::Color,
            "a green bench and a red car",
            vec![obj("bench", &["green"]), obj("car", &["red"])],
        );
        let q: Vec<String> = disentangle(&r).unwrap().into_iter().map(|q| q.text).collect();
        assert_eq!(q, ["a green bench?", "a red car?"]);

        let r = record(
            Category::Shape,
            "a tall tree and a red car",
            vec![obj("tree", &["tall"]), obj("car", &["red"])],
        );
        let q: Vec<String> = disentangle(&r).unwrap().into_iter().map(|q| q.text).collect();
        assert_eq!(q, ["a tall tree?", "a red car?"]);

        let r = record(Category::Complex, "a big, green apple", vec![obj("apple", &["big", "green"])]);
        assert_eq!(disentangle(&r).unwrap()[0].text, "a big, green apple?");
        let split = disentangle_with(&r, QuestionMode::PerAttribute).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split[1].text, "a green apple?");
    }

    #[test]
    fn structure_missing_is_inapplicable() {
        let mut r = record(Category::Color, "a red car", vec![]);
        r.structure_missing = true;
        let err = disentangle(&r).unwrap_err();
        assert!(err.is_inapplicable());
    }

    #[test]
    fn bvqa_multiplies_probabilities() {
        let r = record(
            Category::Color,
            "a green bench and a red car",
            vec![obj("bench", &["green"]), obj("car", &["red"])],
        );
        let vqa = FakeVqa::new(0).with("i", "a green bench?", 0.9).with("i", "a red car?", 0.8);
        assert_relative_eq!(bvqa_score(&img("i"), &r, &vqa).unwrap().value, 0.72, epsilon = 1e-12);
        let vqa = FakeVqa::new(0).with("i", "a green bench?", 0.0).with("i", "a red car?", 0.8);
        assert_eq!(bvqa_score(&img("i"), &r, &vqa).unwrap().value, 0.0);
    }

    #[test]
    fn clip_clamps_negative_cosine() {
        let r = record(Category::Color, "a red car", vec![obj("car", &["red"])]);
        let same = FakeEmbedder::new(0, 2).with_text("a red car", vec![1.0, 0.0]);
        let e = same.clone().with_image("i", vec![1.0, 0.0]);
        assert_relative_eq!(clip_score(&img("i"), &r, &e).unwrap().value, 1.0, epsilon = 1e-12);
        let e = same.clone().with_image("i", vec![0.0, 3.0]);
        assert_eq!(clip_score(&img("i"), &r, &e).unwrap().value, 0.0);
        let e = same.with_image("i", vec![-1.0, 0.0]);
        let s = clip_score(&img("i"), &r, &e).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(matches!(s.detail, ScoreDetail::Cosine { cosine, .. } if cosine < -0.99));
    }

    #[test]
    fn blip_clip_compares_caption_to_prompt() {
        let r = record(Category::Color, "a red car", vec![obj("car", &["red"])]);
        let cap = FakeCaptioner::new(0).with("i", "a red car");
        let e = FakeEmbedder::new(0, 8);
        assert_relative_eq!(blip_clip_score(&img("i"), &r, &cap, &e).unwrap().value, 1.0, epsilon = 1e-12);
        let cap = FakeCaptioner::new(0).with("i", "a dog");
        let e = FakeEmbedder::new(0, 2).with_text("a dog", vec![0.0, 1.0]).with_text("a red car", vec![1.0, 0.0]);
        assert_eq!(blip_clip_score(&img("i"), &r, &cap, &e).unwrap().value, 0.0);
    }

    fn spatial_record() -> PromptRecord {
        let mut r = record(Category::Spatial, "a cat on the left of a dog", vec![obj("cat", &[]), obj("dog", &[])]);
        r.relations.push(RelationSpec {
            subject_index: 0,
            object_index: 1,
            word: "on the left of".into(),
            kind: RelationKind::Spatial,
        });
        r
    }

    #[test]
    fn unidet_scores_constructed_layout() {
        let r = spatial_record();
        let mapping = NounClassMap::identity(["cat", "dog"]);
        let det = FakeDetector::new().with(
            "i",
            vec![
                Detection::new("cat", 0.9, BBox::new(10.0, 100.0, 60.0, 150.0).unwrap()).unwrap(),
                Detection::new("dog", 0.9, BBox::new(300.0, 100.0, 360.0, 150.0).unwrap()).unwrap(),
            ],
        );
        let cfg = GeometryConfig::default();
        assert_eq!(unidet_metric(&img("i"), &r, &det, &mapping, &cfg).unwrap().value, 1.0);
        assert_eq!(unidet_metric(&img("empty"), &r, &det, &mapping, &cfg).unwrap().value, 0.0);
        let twin = crate::suite::swap_relation(&r);
        assert_eq!(unidet_metric(&img("i"), &twin, &det, &mapping, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn three_in_one_applicability() {
        assert_relative_eq!(combine(0.30, Some(0.60), 0.15).recompute(), 0.35, epsilon = 1e-12);
        assert_relative_eq!(combine(0.4, None, 0.6).recompute(), 0.5, epsilon = 1e-12);
        assert_eq!(combine(1.0, Some(1.0), 1.0).recompute(), 1.0);
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in MetricKind::ALL {
            assert_eq!(m.as_str().parse::<MetricKind>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.as_str());
        }
        assert_eq!(MetricKind::parse_list("b_vqa, clip,b_vqa").unwrap(), [MetricKind::BVqa, MetricKind::Clip]);
        assert!("fid".parse::<MetricKind>().is_err());
    }
}
