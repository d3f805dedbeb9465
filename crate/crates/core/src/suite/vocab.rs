use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttributeKind, Result, SuiteError};

/// All seven spatial phrases, directional ones first.
pub const SPATIAL_WORDS: [&str; 7] = [
    "on the left of",
    "on the right of",
    "on the top of",
    "on the bottom of",
    "on the side of",
    "next to",
    "near",
];

/// Phrases whose meaning flips when subject and object are swapped.
pub const DIRECTIONAL_WORDS: [&str; 4] =
    ["on the left of", "on the right of", "on the top of", "on the bottom of"];

pub const SYMMETRIC_WORDS: [&str; 3] = ["on the side of", "next to", "near"];

const SHAPES: [&str; 21] = [
    "long",
    "tall",
    "short",
    "big",
    "small",
    "cubic",
    "cylindrical",
    "pyramidal",
    "round",
    "circular",
    "oval",
    "oblong",
    "spherical",
    "triangular",
    "square",
    "rectangular",
    "conical",
    "pentagonal",
    "teardrop",
    "crescent",
    "diamond",
];

const TEXTURES: [(&str, &[&str]); 8] = [
    ("rubber", &["band", "ball", "tire", "gloves", "sole shoes", "eraser", "boots", "mat"]),
    (
        "plastic",
        &["bottle", "bag", "toy", "cutlery", "chair", "phone case", "container", "cup", "plate"],
    ),
    (
        "metallic",
        &[
            "car",
            "jewelry",
            "watch",
            "keychain",
            "desk lamp",
            "door knob",
            "spoon",
            "fork",
            "knife",
            "key",
            "ring",
            "necklace",
            "bracelet",
            "earring",
        ],
    ),
    (
        "wooden",
        &[
            "chair",
            "table",
            "picture frame",
            "toy",
            "jewelry box",
            "door",
            "floor",
            "chopsticks",
            "pencils",
            "spoon",
            "knife",
        ],
    ),
    (
        "fabric",
        &[
            "bag", "pillow", "curtain", "shirt", "pants", "dress", "blanket", "towel", "rug", "hat",
            "scarf", "sweater", "jacket",
        ],
    ),
    (
        "fluffy",
        &["pillow", "blanket", "teddy bear", "rug", "sweater", "clouds", "towel", "scarf", "hat"],
    ),
    (
        "leather",
        &["jacket", "shoes", "belt", "bag", "wallet", "gloves", "chair", "sofa", "hat", "watch"],
    ),
    ("glass", &["bottle", "vase", "window", "cup", "mirror", "jar", "table", "bowl", "plate"]),
];

const COLORS: [&str; 24] = [
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white",
    "gray", "silver", "gold", "beige", "turquoise", "violet", "maroon", "navy", "teal", "cyan",
    "magenta", "crimson", "lavender", "olive",
];

const OBJECT_NOUNS: [&str; 60] = [
    "apple", "backpack", "balloon", "banana", "bench", "bicycle", "bird", "boat", "book",
    "bottle", "bowl", "box", "bus", "butterfly", "cake", "candle", "car", "chair", "clock",
    "coat", "cup", "curtain", "desk", "door", "dress", "flower", "fork", "giraffe", "guitar",
    "hat", "horse", "house", "jacket", "kite", "lamp", "laptop", "leaf", "mirror", "motorcycle",
    "mug", "orange", "pen", "pillow", "plate", "rose", "scarf", "sheep", "shoe", "sofa",
    "suitcase", "table", "teapot", "tie", "towel", "train", "tree", "truck", "umbrella", "vase",
    "wallet",
];

const PERSONS: [&str; 10] = [
    "man", "woman", "girl", "boy", "person", "baby", "child", "chef", "doctor", "soldier",
];

const ANIMALS: [&str; 14] = [
    "cat", "dog", "horse", "rabbit", "frog", "turtle", "giraffe", "elephant", "bird", "sheep",
    "cow", "bear", "mouse", "lion",
];

const THINGS: [&str; 20] = [
    "table", "chair", "car", "bowl", "bag", "cup", "computer", "bench", "lamp", "sofa",
    "bicycle", "suitcase", "vase", "book", "clock", "phone", "bottle", "television", "plate",
    "backpack",
];

const NON_SPATIAL_VERBS: [&str; 11] = [
    "watches", "speaks to", "wears", "holds", "has", "looks at", "talks to", "plays with",
    "walks with", "stands on", "sits on",
];

/// Word lists the generators draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    /// Texture word to the nouns that texture can describe.
    pub textures: BTreeMap<String, Vec<String>>,
    pub spatial_words: Vec<String>,
    /// Nouns for color and shape templates.
    pub object_nouns: Vec<String>,
    pub persons: Vec<String>,
    pub animals: Vec<String>,
    pub things: Vec<String>,
    pub non_spatial_verbs: Vec<String>,
}

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| (*w).to_owned()).collect()
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            colors: owned(&COLORS),
            shapes: owned(&SHAPES),
            textures: TEXTURES.iter().map(|(t, nouns)| ((*t).to_owned(), owned(nouns))).collect(),
            spatial_words: owned(&SPATIAL_WORDS),
            object_nouns: owned(&OBJECT_NOUNS),
            persons: owned(&PERSONS),
            animals: owned(&ANIMALS),
            things: owned(&THINGS),
            non_spatial_verbs: owned(&NON_SPATIAL_VERBS),
        }
    }
}

impl Vocabulary {
    /// Every (attribute value, noun) combination a template of this kind may use.
    pub fn attribute_pairs(&self, kind: AttributeKind) -> Vec<(String, String)> {
        match kind {
            AttributeKind::Texture => self
                .textures
                .iter()
                .flat_map(|(t, nouns)| nouns.iter().map(move |n| (t.clone(), n.clone())))
                .collect(),
            AttributeKind::Color | AttributeKind::Shape => {
                let words = if kind == AttributeKind::Color { &self.colors } else { &self.shapes };
                words
                    .iter()
                    .flat_map(|w| self.object_nouns.iter().map(move |n| (w.clone(), n.clone())))
                    .collect()
            }
        }
    }

    pub fn attribute_words(&self, kind: AttributeKind) -> Vec<String> {
        match kind {
            AttributeKind::Color => self.colors.clone(),
            AttributeKind::Shape => self.shapes.clone(),
            AttributeKind::Texture => self.textures.keys().cloned().collect(),
        }
    }

    pub fn spatial_nouns(&self) -> Vec<String> {
        let mut nouns: Vec<String> = Vec::new();
        for n in self.persons.iter().chain(&self.animals).chain(&self.things) {
            if !nouns.contains(n) {
                nouns.push(n.clone());
            }
        }
        nouns
    }

    pub fn is_shape(&self, word: &str) -> bool {
        self.shapes.iter().any(|s| s == word)
    }

    pub fn texture_allows(&self, texture: &str, noun: &str) -> bool {
        self.textures.get(texture).is_some_and(|nouns| nouns.iter().any(|n| n == noun))
    }

    /// Checks the texture table shape: exactly the eight reference textures,
    /// each describing at least eight nouns.
    pub fn check(&self) -> Result<()> {
        let expected: Vec<&str> = TEXTURES.iter().map(|(t, _)| *t).collect();
        let mut keys: Vec<&str> = self.textures.keys().map(String::as_str).collect();
        let mut sorted_expected = expected.clone();
        sorted_expected.sort_unstable();
        keys.sort_unstable();
        if keys != sorted_expected {
            return Err(SuiteError::Config(format!(
                "texture table must have exactly {expected:?}, found {keys:?}"
            )));
        }
        if let Some((t, nouns)) = self.textures.iter().find(|(_, n)| n.len() < 8) {
            return Err(SuiteError::Config(format!(
                "texture `{t}` describes only {} nouns",
                nouns.len()
            )));
        }
        if let Some(w) = self.spatial_words.iter().find(|w| !SPATIAL_WORDS.contains(&w.as_str())) {
            return Err(SuiteError::Config(format!("`{w}` is not a spatial phrase")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_is_well_formed() {
        let vocab = Vocabulary::default();
        vocab.check().unwrap();
        assert_eq!(vocab.shapes.len(), 21);
        assert_eq!(vocab.textures.len(), 8);
        assert!(vocab.texture_allows("rubber", "ball"));
        assert!(vocab.texture_allows("plastic", "bottle"));
        assert!(!vocab.texture_allows("glass", "band"));
        assert_eq!(vocab.spatial_words.len(), 7);
    }

    #[test]
    fn texture_pairs_follow_the_table() {
        let vocab = Vocabulary::default();
        let pairs = vocab.attribute_pairs(AttributeKind::Texture);
        assert_eq!(pairs.len(), 8 + 9 + 14 + 11 + 13 + 9 + 10 + 9);
        assert!(pairs.iter().all(|(t, n)| vocab.texture_allows(t, n)));
    }

    #[test]
    fn missing_texture_fails_check() {
        let mut vocab = Vocabulary::default();
        vocab.textures.remove("glass");
        assert!(vocab.check().is_err());
        let mut vocab = Vocabulary::default();
        vocab.textures.get_mut("rubber").unwrap().truncate(3);
        assert!(vocab.check().is_err());
    }
}
