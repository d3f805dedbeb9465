use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::split::{split_attribute_category, split_plain};
use super::{
    render_template, AttributeKind, AttributeSpec, Category, Novelty, ObjectSpec, PromptRecord,
    RelationKind, RelationSpec, Result, Source, Split, SuiteError, SuiteManifest, Vocabulary,
    DIRECTIONAL_WORDS, SYMMETRIC_WORDS,
};
use crate::util::seeded_rng;

fn attempts_for(count: usize) -> usize {
    count * 200 + 10_000
}

pub(crate) fn template_record(
    category: Category,
    index: usize,
    objects: Vec<ObjectSpec>,
    relations: Vec<RelationSpec>,
) -> PromptRecord {
    let mut record = PromptRecord {
        id: format!("{category}_{index:04}"),
        category,
        split: Split::Train,
        novelty: Novelty::NotApplicable,
        text: String::new(),
        objects,
        relations,
        source: Source::Template,
        structure_missing: false,
    };
    record.text = render_template(&record);
    record
}

/// Two-object attribute prompts drawn from a pool of (attribute, noun) pairs.
/// Nouns within one prompt differ and texts never repeat, including against
/// `taken`.
pub(crate) fn prompts_from_pairs(
    category: Category,
    pairs: &[(String, String)],
    count: usize,
    rng: &mut ChaCha8Rng,
    taken: &mut HashSet<String>,
) -> Result<Vec<PromptRecord>> {
    let kind = category
        .attribute_kind()
        .ok_or_else(|| SuiteError::Config(format!("{category} is not an attribute category")))?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if pairs.len() < 2 {
        return Err(SuiteError::Config(format!("empty vocabulary for {category}")));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > attempts_for(count) {
            return Err(SuiteError::Config(format!(
                "vocabulary for {category} too small for {count} distinct prompts"
            )));
        }
        let (a1, n1) = &pairs[rng.gen_range(0..pairs.len())];
        let (a2, n2) = &pairs[rng.gen_range(0..pairs.len())];
        if n1 == n2 {
            continue;
        }
        let objects = vec![
            ObjectSpec::new(n1.clone(), vec![AttributeSpec::new(kind, a1.clone())]),
            ObjectSpec::new(n2.clone(), vec![AttributeSpec::new(kind, a2.clone())]),
        ];
        let record = template_record(category, out.len(), objects, Vec::new());
        if taken.insert(record.text.clone()) {
            out.push(record);
        }
    }
    Ok(out)
}

/// Fixed-template attribute prompts: "a {adj} {noun} and a {adj} {noun}".
pub fn generate_template_attribute_prompts(
    category: Category,
    vocab: &Vocabulary,
    seed: u64,
    count: usize,
) -> Result<Vec<PromptRecord>> {
    let kind = category
        .attribute_kind()
        .ok_or_else(|| SuiteError::Config(format!("{category} is not an attribute category")))?;
    let pairs = vocab.attribute_pairs(kind);
    if pairs.is_empty() {
        return Err(SuiteError::Config(format!("empty vocabulary for {category}")));
    }
    let mut rng = seeded_rng(seed, category.as_str());
    prompts_from_pairs(category, &pairs, count, &mut rng, &mut HashSet::new())
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> Option<&'a String> {
    words.choose(rng)
}

fn pick_spatial_noun<'a>(rng: &mut ChaCha8Rng, vocab: &'a Vocabulary) -> Option<&'a String> {
    let pools: Vec<&Vec<String>> =
        [&vocab.persons, &vocab.animals, &vocab.things].into_iter().filter(|p| !p.is_empty()).collect();
    let pool = pools.choose(rng)?;
    pick(rng, pool)
}

fn spatial_record(index: usize, subject: &str, word: &str, object: &str) -> PromptRecord {
    template_record(
        Category::Spatial,
        index,
        vec![ObjectSpec::bare(subject), ObjectSpec::bare(object)],
        vec![RelationSpec {
            subject_index: 0,
            object_index: 1,
            word: word.to_owned(),
            kind: RelationKind::Spatial,
        }],
    )
}

/// The contrastive twin of a two-object relation prompt: subject and object
/// nouns trade places. Applying it twice gives back the original.
pub fn swap_relation(record: &PromptRecord) -> PromptRecord {
    let mut twin = record.clone();
    if let Some(rel) = twin.relations.first().cloned() {
        twin.objects.swap(rel.subject_index, rel.object_index);
        if twin.source == Source::Template {
            twin.text = render_template(&twin);
        }
    }
    twin
}

/// Spatial prompts "a {noun} {relation} a {noun}". Directional relations come
/// in contrastive pairs, so `count` must be even whenever the vocabulary
/// contains a directional phrase.
pub fn generate_spatial_prompts(
    vocab: &Vocabulary,
    seed: u64,
    count: usize,
) -> Result<Vec<PromptRecord>> {
    let directional: Vec<&String> =
        vocab.spatial_words.iter().filter(|w| DIRECTIONAL_WORDS.contains(&w.as_str())).collect();
    let symmetric: Vec<&String> =
        vocab.spatial_words.iter().filter(|w| SYMMETRIC_WORDS.contains(&w.as_str())).collect();
    if directional.is_empty() && symmetric.is_empty() {
        return Err(SuiteError::Config("no spatial phrases in vocabulary".into()));
    }
    if !directional.is_empty() && count % 2 == 1 {
        return Err(SuiteError::Config(format!(
            "spatial count {count} is odd but directional relations need contrastive pairs"
        )));
    }
    if vocab.spatial_nouns().len() < 2 {
        return Err(SuiteError::Config("spatial noun pools need at least two nouns".into()));
    }
    let mut rng = seeded_rng(seed, "spatial");
    let words: Vec<&String> = directional.iter().chain(&symmetric).copied().collect();
    let mut taken = HashSet::new();
    let mut out: Vec<PromptRecord> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > attempts_for(count) {
            return Err(SuiteError::Config(format!(
                "noun pools too small for {count} distinct spatial prompts"
            )));
        }
        let remaining = count - out.len();
        let word = if remaining < 2 {
            match symmetric.choose(&mut rng) {
                Some(w) => *w,
                None => break,
            }
        } else {
            words[rng.gen_range(0..words.len())]
        };
        let (Some(subject), Some(object)) =
            (pick_spatial_noun(&mut rng, vocab), pick_spatial_noun(&mut rng, vocab))
        else {
            continue;
        };
        if subject == object {
            continue;
        }
        let record = spatial_record(out.len(), subject, word, object);
        if taken.contains(&record.text) {
            continue;
        }
        if DIRECTIONAL_WORDS.contains(&word.as_str()) {
            let mut twin = swap_relation(&record);
            if taken.contains(&twin.text) {
                continue;
            }
            twin.id = format!("spatial_{:04}", out.len() + 1);
            taken.insert(record.text.clone());
            taken.insert(twin.text.clone());
            out.push(record);
            out.push(twin);
        } else {
            taken.insert(record.text.clone());
            out.push(record);
        }
    }
    Ok(out)
}

/// Interaction prompts "a {subject} {verb} a {object}".
pub fn generate_nonspatial_prompts(
    vocab: &Vocabulary,
    seed: u64,
    count: usize,
) -> Result<Vec<PromptRecord>> {
    let subjects: Vec<String> = vocab.persons.iter().chain(&vocab.animals).cloned().collect();
    let objects: Vec<String> = vocab.things.iter().chain(&vocab.animals).cloned().collect();
    if subjects.is_empty() || objects.is_empty() || vocab.non_spatial_verbs.is_empty() {
        return Err(SuiteError::Config("empty vocabulary for non_spatial".into()));
    }
    let mut rng = seeded_rng(seed, "non_spatial");
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > attempts_for(count) {
            return Err(SuiteError::Config(format!(
                "vocabulary too small for {count} distinct non-spatial prompts"
            )));
        }
        let (Some(s), Some(verb), Some(o)) = (
            pick(&mut rng, &subjects),
            pick(&mut rng, &vocab.non_spatial_verbs),
            pick(&mut rng, &objects),
        ) else {
            continue;
        };
        if s == o {
            continue;
        }
        let record = template_record(
            Category::NonSpatial,
            out.len(),
            vec![ObjectSpec::bare(s.clone()), ObjectSpec::bare(o.clone())],
            vec![RelationSpec {
                subject_index: 0,
                object_index: 1,
                word: verb.clone(),
                kind: RelationKind::NonSpatial,
            }],
        );
        if taken.insert(record.text.clone()) {
            out.push(record);
        }
    }
    Ok(out)
}

/// The four complex-composition scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum ComplexScenario {
    TwoMixed,
    TwoMultiple,
    ManyMixed,
    ManyMultiple,
}

impl ComplexScenario {
    pub(crate) const ALL: [ComplexScenario; 4] = [
        ComplexScenario::TwoMixed,
        ComplexScenario::TwoMultiple,
        ComplexScenario::ManyMixed,
        ComplexScenario::ManyMultiple,
    ];

    pub(crate) fn of(record: &PromptRecord) -> Self {
        let multiple = record.objects.iter().any(|o| o.attributes.len() > 1);
        match (record.objects.len() > 2, multiple) {
            (false, false) => ComplexScenario::TwoMixed,
            (false, true) => ComplexScenario::TwoMultiple,
            (true, false) => ComplexScenario::ManyMixed,
            (true, true) => ComplexScenario::ManyMultiple,
        }
    }
}

const KIND_ORDER: [AttributeKind; 3] =
    [AttributeKind::Shape, AttributeKind::Color, AttributeKind::Texture];

fn complex_object(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    kinds: &[AttributeKind],
) -> Option<ObjectSpec> {
    let mut kinds: Vec<AttributeKind> = kinds.to_vec();
    kinds.sort_by_key(|k| KIND_ORDER.iter().position(|o| o == k));
    let mut attributes = Vec::with_capacity(kinds.len());
    let noun = if kinds.contains(&AttributeKind::Texture) {
        let textures: Vec<&String> = vocab.textures.keys().collect();
        let texture = *textures.choose(rng)?;
        let noun = vocab.textures[texture].choose(rng)?.clone();
        for kind in &kinds {
            let value = match kind {
                AttributeKind::Texture => texture.clone(),
                AttributeKind::Color => pick(rng, &vocab.colors)?.clone(),
                AttributeKind::Shape => pick(rng, &vocab.shapes)?.clone(),
            };
            attributes.push(AttributeSpec::new(*kind, value));
        }
        noun
    } else {
        for kind in &kinds {
            let value = match kind {
                AttributeKind::Color => pick(rng, &vocab.colors)?.clone(),
                _ => pick(rng, &vocab.shapes)?.clone(),
            };
            attributes.push(AttributeSpec::new(*kind, value));
        }
        pick(rng, &vocab.object_nouns)?.clone()
    };
    Some(ObjectSpec::new(noun, attributes))
}

fn complex_candidate(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    scenario: ComplexScenario,
    index: usize,
) -> Option<PromptRecord> {
    let n_objects = match scenario {
        ComplexScenario::TwoMixed | ComplexScenario::TwoMultiple => 2,
        _ => rng.gen_range(3..=4),
    };
    let multiple = matches!(scenario, ComplexScenario::TwoMultiple | ComplexScenario::ManyMultiple);
    let mut objects = Vec::with_capacity(n_objects);
    if multiple {
        for _ in 0..n_objects {
            let mut kinds = KIND_ORDER.to_vec();
            kinds.shuffle(rng);
            kinds.truncate(2);
            objects.push(complex_object(rng, vocab, &kinds)?);
        }
    } else {
        let mut kinds: Vec<AttributeKind> =
            (0..n_objects).map(|_| *KIND_ORDER.choose(rng).unwrap_or(&AttributeKind::Color)).collect();
        if kinds.iter().all(|k| *k == kinds[0]) {
            let other = KIND_ORDER.iter().copied().find(|k| *k != kinds[0])?;
            let slot = rng.gen_range(0..n_objects);
            kinds[slot] = other;
        }
        for kind in kinds {
            objects.push(complex_object(rng, vocab, &[kind])?);
        }
    }
    let mut nouns = HashSet::new();
    if !objects.iter().all(|o| nouns.insert(o.noun.clone())) {
        return None;
    }
    let mut relations = Vec::new();
    if rng.gen_bool(0.5) {
        let (word, kind) = if rng.gen_bool(0.5) {
            (pick(rng, &vocab.spatial_words)?.clone(), RelationKind::Spatial)
        } else {
            (pick(rng, &vocab.non_spatial_verbs)?.clone(), RelationKind::NonSpatial)
        };
        relations.push(RelationSpec { subject_index: 0, object_index: 1, word, kind });
    }
    Some(template_record(Category::Complex, index, objects, relations))
}

/// Complex compositions, spread evenly over the four scenarios (two or more
/// objects, mixed or multiple attributes), half of them carrying a spatial or
/// non-spatial relation between the first two objects.
pub fn generate_complex_prompts(
    vocab: &Vocabulary,
    seed: u64,
    count: usize,
) -> Result<Vec<PromptRecord>> {
    if vocab.colors.is_empty() || vocab.shapes.is_empty() || vocab.object_nouns.is_empty() {
        return Err(SuiteError::Config("empty vocabulary for complex".into()));
    }
    let mut rng = seeded_rng(seed, "complex");
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > attempts_for(count) {
            return Err(SuiteError::Config(format!(
                "vocabulary too small for {count} distinct complex prompts"
            )));
        }
        let scenario = ComplexScenario::ALL[out.len() % 4];
        let Some(record) = complex_candidate(&mut rng, vocab, scenario, out.len()) else {
            continue;
        };
        if ComplexScenario::of(&record) == scenario && taken.insert(record.text.clone()) {
            out.push(record);
        }
    }
    Ok(out)
}

/// Builds a complete generated suite with the reference proportions.
#[derive(Debug, Clone)]
pub struct SuiteBuilder {
    pub vocab: Vocabulary,
    pub seed: u64,
    pub per_category: usize,
    pub train_per_category: usize,
    pub seen_per_category: usize,
    pub unseen_per_category: usize,
}

impl Default for SuiteBuilder {
    fn default() -> Self {
        Self {
            vocab: Vocabulary::default(),
            seed: 0,
            per_category: 1000,
            train_per_category: 700,
            seen_per_category: 200,
            unseen_per_category: 100,
        }
    }
}

impl SuiteBuilder {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn build_category(&self, category: Category) -> Result<Vec<PromptRecord>> {
        let test = self
            .per_category
            .checked_sub(self.train_per_category)
            .ok_or_else(|| SuiteError::Config("train split larger than category".into()))?;
        let seed = self.seed;
        let mut records = match category {
            Category::Color | Category::Shape | Category::Texture => {
                if self.seen_per_category + self.unseen_per_category != test {
                    return Err(SuiteError::Config(format!(
                        "seen {} + unseen {} must equal test size {test}",
                        self.seen_per_category, self.unseen_per_category
                    )));
                }
                split_attribute_category(
                    category,
                    &self.vocab,
                    seed,
                    self.train_per_category,
                    self.seen_per_category,
                    self.unseen_per_category,
                )?
            }
            Category::Spatial => {
                let all = generate_spatial_prompts(&self.vocab, seed, self.per_category)?;
                split_plain(all, self.train_per_category, seed)?
            }
            Category::NonSpatial => {
                let all = generate_nonspatial_prompts(&self.vocab, seed, self.per_category)?;
                split_plain(all, self.train_per_category, seed)?
            }
            Category::Complex => {
                let all = generate_complex_prompts(&self.vocab, seed, self.per_category)?;
                let scenarios = ComplexScenario::ALL.len();
                if self.train_per_category % scenarios != 0 || self.per_category % scenarios != 0 {
                    return Err(SuiteError::Config(
                        "complex sizes must divide evenly over the four scenarios".into(),
                    ));
                }
                let mut out = Vec::with_capacity(all.len());
                for scenario in ComplexScenario::ALL {
                    let group: Vec<PromptRecord> =
                        all.iter().filter(|r| ComplexScenario::of(r) == scenario).cloned().collect();
                    out.extend(split_plain(group, self.train_per_category / scenarios, seed)?);
                }
                out
            }
        };
        records.sort_by_key(|r| r.split);
        for (i, r) in records.iter_mut().enumerate() {
            r.id = format!("{category}_{i:04}");
        }
        Ok(records)
    }

    pub fn build(&self) -> Result<SuiteManifest> {
        self.vocab.check()?;
        let mut records = Vec::with_capacity(self.per_category * Category::ALL.len());
        for category in Category::ALL {
            records.extend(self.build_category(category)?);
        }
        Ok(SuiteManifest::new(records))
    }
}
