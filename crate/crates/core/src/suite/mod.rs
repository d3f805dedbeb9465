//! Benchmark prompt suite: structured prompt records, vocabularies, template
//! generators, file ingestion, train/test splitting and validation.
//!
//! Every record carries its objects, attributes and relations explicitly so
//! that metrics never have to parse prompt text.

mod generate;
mod io;
mod render;
mod split;
mod validate;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    generate_complex_prompts, generate_nonspatial_prompts, generate_spatial_prompts,
    generate_template_attribute_prompts, swap_relation, SuiteBuilder,
};
pub use io::{export_prompt_file, load_prompt_file, SidecarEntry};
pub use render::{article_for, object_phrase, render_template};
pub use split::{assign_seen_unseen, attribute_pairs, split_attribute_category, split_plain};
pub use validate::{
    validate_suite, validate_suite_with, CategoryReport, SuiteExpectations, ValidationReport,
};
pub use vocab::{Vocabulary, DIRECTIONAL_WORDS, SPATIAL_WORDS, SYMMETRIC_WORDS};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SuiteError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Color,
    Shape,
    Texture,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub kind: AttributeKind,
    pub value: String,
}

impl AttributeSpec {
    pub fn new(kind: AttributeKind, value: impl Into<String>) -> Self {
        Self { kind, value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub noun: String,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
}

impl ObjectSpec {
    pub fn new(noun: impl Into<String>, attributes: Vec<AttributeSpec>) -> Self {
        Self { noun: noun.into(), attributes }
    }

    pub fn bare(noun: impl Into<String>) -> Self {
        Self::new(noun, Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Spatial,
    NonSpatial,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationSpec {
    pub subject_index: usize,
    pub object_index: usize,
    pub word: String,
    pub kind: RelationKind,
}

/// The six benchmark sub-categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Color,
    Shape,
    Texture,
    Spatial,
    NonSpatial,
    Complex,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Color,
        Category::Shape,
        Category::Texture,
        Category::Spatial,
        Category::NonSpatial,
        Category::Complex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Shape => "shape",
            Category::Texture => "texture",
            Category::Spatial => "spatial",
            Category::NonSpatial => "non_spatial",
            Category::Complex => "complex",
        }
    }

    /// The attribute kind bound by an attribute-binding category.
    pub fn attribute_kind(self) -> Option<AttributeKind> {
        match self {
            Category::Color => Some(AttributeKind::Color),
            Category::Shape => Some(AttributeKind::Shape),
            Category::Texture => Some(AttributeKind::Texture),
            _ => None,
        }
    }

    pub fn is_attribute(self) -> bool {
        self.attribute_kind().is_some()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = SuiteError;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == normalized || (normalized == "nonspatial" && *c == Category::NonSpatial))
            .ok_or_else(|| SuiteError::Config(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = SuiteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" | "val" => Ok(Split::Test),
            other => Err(SuiteError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Novelty {
    Seen,
    Unseen,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Template,
    Chatgpt,
    Cc500,
    Coco,
}

/// One benchmark prompt with its structured semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub category: Category,
    pub split: Split,
    pub novelty: Novelty,
    pub text: String,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
    pub source: Source,
    /// Set for ingested prompts that came without sidecar metadata. Such
    /// records are excluded from structure-dependent metrics.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub structure_missing: bool,
}

impl PromptRecord {
    /// Spatial relations only.
    pub fn spatial_relations(&self) -> impl Iterator<Item = &RelationSpec> {
        self.relations.iter().filter(|r| r.kind == RelationKind::Spatial)
    }

    /// Structural invariants that hold independently of the rest of the suite.
    pub fn check_structure(&self) -> std::result::Result<(), String> {
        if self.structure_missing {
            return Ok(());
        }
        for object in &self.objects {
            if object.noun.trim().is_empty() {
                return Err(format!("{}: empty noun", self.id));
            }
            if object.attributes.iter().any(|a| a.value.trim().is_empty()) {
                return Err(format!("{}: empty attribute value", self.id));
            }
        }
        for rel in &self.relations {
            if rel.subject_index == rel.object_index {
                return Err(format!("{}: relation links an object to itself", self.id));
            }
            if rel.subject_index >= self.objects.len() || rel.object_index >= self.objects.len() {
                return Err(format!("{}: relation index out of range", self.id));
            }
            if rel.kind == RelationKind::Spatial && !SPATIAL_WORDS.contains(&rel.word.as_str()) {
                return Err(format!("{}: `{}` is not a spatial phrase", self.id, rel.word));
            }
        }
        if self.category.is_attribute() {
            if self.objects.len() < 2 {
                return Err(format!("{}: attribute prompt needs at least two objects", self.id));
            }
            if self.objects.iter().any(|o| o.attributes.is_empty()) {
                return Err(format!("{}: every object needs an attribute", self.id));
            }
        }
        if self.category == Category::Spatial && self.spatial_relations().count() != 1 {
            return Err(format!("{}: spatial prompt needs exactly one spatial relation", self.id));
        }
        let novelty_allowed = self.category.is_attribute() && self.split == Split::Test;
        if !novelty_allowed && self.novelty != Novelty::NotApplicable {
            return Err(format!("{}: novelty set outside the attribute test split", self.id));
        }
        if self.source == Source::Template {
            let rendered = render_template(self);
            if rendered != self.text {
                return Err(format!(
                    "{}: text `{}` does not match its structure `{rendered}`",
                    self.id, self.text
                ));
            }
        }
        Ok(())
    }
}

/// The whole suite plus derived counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub records: Vec<PromptRecord>,
    #[serde(default)]
    pub counts: SuiteCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteCounts {
    pub per_category: std::collections::BTreeMap<Category, usize>,
    pub train: std::collections::BTreeMap<Category, usize>,
    pub test: std::collections::BTreeMap<Category, usize>,
    pub seen: std::collections::BTreeMap<Category, usize>,
    pub unseen: std::collections::BTreeMap<Category, usize>,
}

impl SuiteManifest {
    pub fn new(records: Vec<PromptRecord>) -> Self {
        let counts = SuiteCounts::of(&records);
        Self { records, counts }
    }

    pub fn category(&self, category: Category) -> impl Iterator<Item = &PromptRecord> {
        self.records.iter().filter(move |r| r.category == category)
    }

    pub fn get(&self, id: &str) -> Option<&PromptRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a manifest; counts are always recomputed from the records.
    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: SuiteManifest = serde_json::from_str(text)?;
        Ok(Self::new(parsed.records))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

impl SuiteCounts {
    pub fn of(records: &[PromptRecord]) -> Self {
        let mut counts = SuiteCounts::default();
        for r in records {
            *counts.per_category.entry(r.category).or_default() += 1;
            match r.split {
                Split::Train => *counts.train.entry(r.category).or_default() += 1,
                Split::Test => *counts.test.entry(r.category).or_default() += 1,
            }
            match r.novelty {
                Novelty::Seen => *counts.seen.entry(r.category).or_default() += 1,
                Novelty::Unseen => *counts.unseen.entry(r.category).or_default() += 1,
                Novelty::NotApplicable => {}
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_parses_aliases() {
        assert_eq!("non-spatial".parse::<Category>().unwrap(), Category::NonSpatial);
        assert_eq!("NonSpatial".parse::<Category>().unwrap(), Category::NonSpatial);
        assert_eq!("Color".parse::<Category>().unwrap(), Category::Color);
        assert!("size".parse::<Category>().is_err());
    }

    #[test]
    fn self_relation_is_rejected() {
        let record = PromptRecord {
            id: "x".into(),
            category: Category::NonSpatial,
            split: Split::Train,
            novelty: Novelty::NotApplicable,
            text: "a man holds a man".into(),
            objects: vec![ObjectSpec::bare("man")],
            relations: vec![RelationSpec {
                subject_index: 0,
                object_index: 0,
                word: "holds".into(),
                kind: RelationKind::NonSpatial,
            }],
            source: Source::Chatgpt,
            structure_missing: false,
        };
        assert!(record.check_structure().is_err());
    }
}
