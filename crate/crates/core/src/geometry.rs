//! Bounding-box geometry behind the detection-based spatial metric.
//!
//! Coordinates are image pixels with y growing downward, so "on the top of"
//! means a smaller center y.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::suite::{PromptRecord, RelationKind, RelationSpec, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need finite 0 <= min < max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("invalid geometry config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min < 0.0 || y_min < 0.0 || x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(label: impl Into<String>, confidence: f64, bbox: BBox) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self { label: label.into(), confidence, bbox })
    }
}

/// One detector output line: `{image_id, detections, image_width, image_height}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub image_width: u32,
    pub image_height: u32,
}

impl DetectionFrame {
    pub fn check(&self) -> Result<(), GeometryError> {
        for d in &self.detections {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(GeometryError::InvalidConfidence(d.confidence));
            }
        }
        Ok(())
    }

    /// Parses a JSON-lines detection file.
    pub fn parse_lines(text: &str) -> Result<Vec<DetectionFrame>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let frame: DetectionFrame =
                    serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))?;
                frame.check().map_err(|e| format!("line {}: {e}", i + 1))?;
                Ok(frame)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub iou_threshold: f64,
    /// Fraction of the image diagonal under which two centers count as close.
    pub proximity_threshold: f64,
    /// Detections below this confidence are ignored.
    pub min_confidence: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.1,
            proximity_threshold: 0.15,
            min_confidence: 0.5,
            image_width: 512,
            image_height: 512,
        }
    }
}

impl GeometryConfig {
    pub fn check(&self) -> Result<(), GeometryError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.iou_threshold) {
            return Err(GeometryError::InvalidConfig(format!(
                "iou_threshold {} not in (0, 1)",
                self.iou_threshold
            )));
        }
        if !open(self.proximity_threshold) {
            return Err(GeometryError::InvalidConfig(format!(
                "proximity_threshold {} not in (0, 1)",
                self.proximity_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(GeometryError::InvalidConfig(format!(
                "min_confidence {} not in [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.image_width = width;
        self.image_height = height;
        self
    }

    pub fn diagonal(&self) -> f64 {
        f64::from(self.image_width).hypot(f64::from(self.image_height))
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn center(b: &BBox) -> (f64, f64) {
    ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Top,
    Bottom,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Top => Direction::Bottom,
            Direction::Bottom => Direction::Top,
        }
    }
}

/// What a relation phrase asks the geometry to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialPredicate {
    Directional(Direction),
    Proximity,
}

impl SpatialPredicate {
    pub fn from_phrase(phrase: &str) -> Option<Self> {
        Some(match phrase.trim() {
            "on the left of" => SpatialPredicate::Directional(Direction::Left),
            "on the right of" => SpatialPredicate::Directional(Direction::Right),
            "on the top of" => SpatialPredicate::Directional(Direction::Top),
            "on the bottom of" => SpatialPredicate::Directional(Direction::Bottom),
            "next to" | "near" | "on the side of" => SpatialPredicate::Proximity,
            _ => return None,
        })
    }
}

/// Where `a` lies relative to `b`, or `None` when the boxes overlap too much,
/// the centers coincide, or horizontal and vertical offsets tie.
pub fn classify_directional(a: &BBox, b: &BBox, cfg: &GeometryConfig) -> Option<Direction> {
    if iou(a, b) >= cfg.iou_threshold {
        return None;
    }
    let (x1, y1) = center(a);
    let (x2, y2) = center(b);
    let dx = (x1 - x2).abs();
    let dy = (y1 - y2).abs();
    if dx > dy {
        if x1 < x2 {
            Some(Direction::Left)
        } else if x1 > x2 {
            Some(Direction::Right)
        } else {
            None
        }
    } else if dy > dx {
        if y1 < y2 {
            Some(Direction::Top)
        } else if y1 > y2 {
            Some(Direction::Bottom)
        } else {
            None
        }
    } else {
        None
    }
}

pub fn classify_proximity(a: &BBox, b: &BBox, cfg: &GeometryConfig) -> bool {
    let (x1, y1) = center(a);
    let (x2, y2) = center(b);
    (x1 - x2).hypot(y1 - y2) < cfg.proximity_threshold * cfg.diagonal()
}

/// Noun to detector class label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NounClassMap {
    entries: BTreeMap<String, String>,
}

impl NounClassMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, noun: impl Into<String>, class: impl Into<String>) -> &mut Self {
        self.entries.insert(noun.into(), class.into());
        self
    }

    /// Each noun maps to a class of the same name.
    pub fn identity<I, S>(nouns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = nouns
            .into_iter()
            .map(|n| {
                let n = n.into();
                (n.clone(), n)
            })
            .collect();
        Self { entries }
    }

    /// Identity mapping over every noun the vocabulary can emit.
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let nouns = vocab
            .spatial_nouns()
            .into_iter()
            .chain(vocab.object_nouns.iter().cloned())
            .chain(vocab.textures.values().flatten().cloned());
        Self::identity(nouns)
    }

    pub fn class_of(&self, noun: &str) -> Option<&str> {
        self.entries.get(noun).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Which stage decided a spatial score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum SpatialDiagnostic {
    NoSpatialRelation,
    UnknownPhrase { phrase: String },
    UnmappedNoun { noun: String },
    NotDetected { noun: String, class: String },
    Evaluated {
        expected: SpatialPredicate,
        /// Observed direction of subject relative to object, if any.
        observed: Option<Direction>,
        proximity: bool,
        iou: f64,
        subject: Detection,
        object: Detection,
        satisfied: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialOutcome {
    pub value: f64,
    pub diagnostic: SpatialDiagnostic,
}

impl SpatialOutcome {
    fn fail(diagnostic: SpatialDiagnostic) -> Self {
        Self { value: 0.0, diagnostic }
    }
}

fn instances<'a>(detections: &'a [Detection], class: &str, cfg: &GeometryConfig) -> Vec<&'a Detection> {
    let mut hits: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.label == class && d.confidence >= cfg.min_confidence)
        .collect();
    hits.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    hits
}

fn evaluate_pair(
    subject: &Detection,
    object: &Detection,
    predicate: SpatialPredicate,
    cfg: &GeometryConfig,
) -> SpatialDiagnostic {
    let observed = classify_directional(&subject.bbox, &object.bbox, cfg);
    let proximity = classify_proximity(&subject.bbox, &object.bbox, cfg);
    let satisfied = match predicate {
        SpatialPredicate::Directional(d) => observed == Some(d),
        SpatialPredicate::Proximity => proximity,
    };
    SpatialDiagnostic::Evaluated {
        expected: predicate,
        observed,
        proximity,
        iou: iou(&subject.bbox, &object.bbox),
        subject: subject.clone(),
        object: object.clone(),
        satisfied,
    }
}

/// Scores one relation of a record against detector output: 1.0 when both
/// nouns are found and the relation holds, else 0.0.
///
/// Each noun resolves to its highest-confidence detection. When both nouns
/// map to the same class the two best instances are used and either
/// assignment may satisfy the relation.
pub fn relation_score(
    detections: &[Detection],
    record: &PromptRecord,
    relation: &RelationSpec,
    mapping: &NounClassMap,
    cfg: &GeometryConfig,
) -> SpatialOutcome {
    let Some(predicate) = SpatialPredicate::from_phrase(&relation.word) else {
        return SpatialOutcome::fail(SpatialDiagnostic::UnknownPhrase { phrase: relation.word.clone() });
    };
    let (Some(subject), Some(object)) =
        (record.objects.get(relation.subject_index), record.objects.get(relation.object_index))
    else {
        return SpatialOutcome::fail(SpatialDiagnostic::NoSpatialRelation);
    };
    let mut classes = Vec::with_capacity(2);
    for noun in [&subject.noun, &object.noun] {
        match mapping.class_of(noun) {
            Some(c) => classes.push(c),
            None => return SpatialOutcome::fail(SpatialDiagnostic::UnmappedNoun { noun: noun.clone() }),
        }
    }
    let subject_hits = instances(detections, classes[0], cfg);
    let Some(&best_subject) = subject_hits.first() else {
        return SpatialOutcome::fail(SpatialDiagnostic::NotDetected {
            noun: subject.noun.clone(),
            class: classes[0].to_owned(),
        });
    };
    if classes[0] == classes[1] {
        let Some(&second) = subject_hits.get(1) else {
            return SpatialOutcome::fail(SpatialDiagnostic::NotDetected {
                noun: object.noun.clone(),
                class: classes[1].to_owned(),
            });
        };
        let forward = evaluate_pair(best_subject, second, predicate, cfg);
        let diagnostic = match forward {
            SpatialDiagnostic::Evaluated { satisfied: true, .. } => forward,
            _ => evaluate_pair(second, best_subject, predicate, cfg),
        };
        return finish(diagnostic);
    }
    let object_hits = instances(detections, classes[1], cfg);
    let Some(&best_object) = object_hits.first() else {
        return SpatialOutcome::fail(SpatialDiagnostic::NotDetected {
            noun: object.noun.clone(),
            class: classes[1].to_owned(),
        });
    };
    finish(evaluate_pair(best_subject, best_object, predicate, cfg))
}

fn finish(diagnostic: SpatialDiagnostic) -> SpatialOutcome {
    let value = match &diagnostic {
        SpatialDiagnostic::Evaluated { satisfied: true, .. } => 1.0,
        _ => 0.0,
    };
    SpatialOutcome { value, diagnostic }
}

/// Scores a spatial record's single spatial relation.
pub fn spatial_score(
    detections: &[Detection],
    record: &PromptRecord,
    mapping: &NounClassMap,
    cfg: &GeometryConfig,
) -> SpatialOutcome {
    match record.relations.iter().find(|r| r.kind == RelationKind::Spatial) {
        Some(rel) => relation_score(detections, record, rel, mapping, cfg),
        None => SpatialOutcome::fail(SpatialDiagnostic::NoSpatialRelation),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{Category, Novelty, ObjectSpec, Source, Split};
    use approx::assert_relative_eq;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Box of side 10 centered at (cx, cy).
    fn around(cx: f64, cy: f64) -> BBox {
        bx(cx - 5.0, cy - 5.0, cx + 5.0, cy + 5.0)
    }

    fn spatial(subject: &str, word: &str, object: &str) -> PromptRecord {
        PromptRecord {
            id: "s".into(),
            category: Category::Spatial,
            split: Split::Test,
            novelty: Novelty::NotApplicable,
            text: format!("a {subject} {word} a {object}"),
            objects: vec![ObjectSpec::bare(subject), ObjectSpec::bare(object)],
            relations: vec![RelationSpec {
                subject_index: 0,
                object_index: 1,
                word: word.into(),
                kind: RelationKind::Spatial,
            }],
            source: Source::Template,
            structure_missing: false,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_relative_eq!(iou(&a, &bx(5.0, 5.0, 15.0, 15.0)), 25.0 / 175.0, epsilon = 1e-12);
    }

    #[test]
    fn centers() {
        assert_eq!(center(&bx(0.0, 0.0, 10.0, 10.0)), (5.0, 5.0));
        assert_eq!(center(&bx(2.0, 4.0, 6.0, 8.0)), (4.0, 6.0));
        assert_eq!(center(&bx(0.0, 0.0, 1.0, 3.0)), (0.5, 1.5));
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(serde_json::from_str::<BBox>("[3, 0, 1, 1]").is_err());
        assert!(Detection::new("cat", 1.5, bx(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn directional_examples() {
        let cfg = GeometryConfig::default();
        assert_eq!(classify_directional(&around(10.0, 50.0), &around(90.0, 50.0), &cfg), Some(Direction::Left));
        assert_eq!(classify_directional(&around(50.0, 10.0), &around(50.0, 90.0), &cfg), Some(Direction::Top));
        assert_eq!(classify_directional(&around(50.0, 90.0), &around(50.0, 10.0), &cfg), Some(Direction::Bottom));
        // iou 0.2 blocks any direction
        let a = bx(0.0, 0.0, 60.0, 10.0);
        let b = bx(40.0, 0.0, 100.0, 10.0);
        assert_relative_eq!(iou(&a, &b), 0.2, epsilon = 1e-12);
        assert_eq!(classify_directional(&a, &b, &cfg), None);
    }

    #[test]
    fn ties_and_coincident_centers_have_no_direction() {
        let cfg = GeometryConfig::default();
        assert_eq!(classify_directional(&around(10.0, 10.0), &around(30.0, 30.0), &cfg), None);
        assert_eq!(classify_directional(&bx(0.0, 0.0, 2.0, 2.0), &bx(0.0, 0.0, 2.0, 2.0), &cfg), None);
    }

    #[test]
    fn proximity_examples() {
        let cfg = GeometryConfig::default();
        assert!(classify_proximity(&around(100.0, 100.0), &around(100.0, 100.0), &cfg));
        assert!(!classify_proximity(&bx(0.0, 0.0, 2.0, 2.0), &bx(510.0, 510.0, 512.0, 512.0), &cfg));
        // 0.15 * sqrt(2) * 512 = 108.6
        assert!(classify_proximity(&around(100.0, 100.0), &around(160.0, 100.0), &cfg));
        assert!(!classify_proximity(&around(100.0, 100.0), &around(210.0, 100.0), &cfg));
    }

    #[test]
    fn spatial_score_left_of() {
        let cfg = GeometryConfig::default();
        let map = NounClassMap::identity(["girl", "horse"]);
        let dets = vec![
            Detection::new("girl", 0.9, bx(10.0, 200.0, 110.0, 400.0)).unwrap(),
            Detection::new("horse", 0.8, bx(300.0, 200.0, 500.0, 400.0)).unwrap(),
        ];
        let record = spatial("girl", "on the left of", "horse");
        assert_eq!(spatial_score(&dets, &record, &map, &cfg).value, 1.0);
        let twin = spatial("horse", "on the left of", "girl");
        assert_eq!(spatial_score(&dets, &twin, &map, &cfg).value, 0.0);
        let missing = spatial_score(&dets[..1], &record, &map, &cfg);
        assert_eq!(missing.value, 0.0);
        assert!(matches!(missing.diagnostic, SpatialDiagnostic::NotDetected { .. }));
    }

    #[test]
    fn unmapped_noun_scores_zero_with_diagnostic() {
        let cfg = GeometryConfig::default();
        let map = NounClassMap::identity(["girl"]);
        let out = spatial_score(&[], &spatial("girl", "near", "unicorn"), &map, &cfg);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.diagnostic, SpatialDiagnostic::UnmappedNoun { noun: "unicorn".into() });
    }

    #[test]
    fn low_confidence_detections_are_ignored() {
        let cfg = GeometryConfig::default();
        let map = NounClassMap::identity(["girl", "horse"]);
        let dets = vec![
            Detection::new("girl", 0.3, bx(10.0, 200.0, 110.0, 400.0)).unwrap(),
            Detection::new("horse", 0.8, bx(300.0, 200.0, 500.0, 400.0)).unwrap(),
        ];
        assert_eq!(spatial_score(&dets, &spatial("girl", "on the left of", "horse"), &map, &cfg).value, 0.0);
    }

    #[test]
    fn highest_confidence_instance_wins() {
        let cfg = GeometryConfig::default();
        let map = NounClassMap::identity(["girl", "horse"]);
        let dets = vec![
            Detection::new("girl", 0.6, bx(400.0, 200.0, 480.0, 400.0)).unwrap(),
            Detection::new("girl", 0.95, bx(10.0, 200.0, 110.0, 400.0)).unwrap(),
            Detection::new("horse", 0.8, bx(250.0, 200.0, 350.0, 400.0)).unwrap(),
        ];
        assert_eq!(spatial_score(&dets, &spatial("girl", "on the left of", "horse"), &map, &cfg).value, 1.0);
    }

    #[test]
    fn detection_frame_parses() {
        let line = r#"{"image_id":"img1","detections":[{"label":"cat","confidence":0.9,"bbox":[1,2,30,40]}],"image_width":512,"image_height":512}"#;
        let frames = DetectionFrame::parse_lines(line).unwrap();
        assert_eq!(frames[0].detections[0].bbox, bx(1.0, 2.0, 30.0, 40.0));
        assert!(DetectionFrame::parse_lines(&line.replace("0.9", "1.9")).is_err());
    }
}
