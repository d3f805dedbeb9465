use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    assign_seen_unseen, Category, Novelty, PromptRecord, Split, SuiteManifest, DIRECTIONAL_WORDS,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub seen: usize,
    pub unseen: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub total: usize,
    pub categories: BTreeMap<Category, CategoryReport>,
    /// Texts that occur more than once within a category.
    pub duplicates: Vec<String>,
    /// Directional spatial prompts whose swapped twin is absent.
    pub orphans: Vec<String>,
    pub structure_missing: usize,
    /// Every violated invariant, one line each.
    pub problems: Vec<String>,
}

/// Sizes a suite is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteExpectations {
    pub per_category: usize,
    pub train: usize,
    pub seen: usize,
    pub unseen: usize,
}

impl Default for SuiteExpectations {
    fn default() -> Self {
        Self { per_category: 1000, train: 700, seen: 200, unseen: 100 }
    }
}

/// Checks a manifest against the reference suite layout.
pub fn validate_suite(manifest: &SuiteManifest) -> ValidationReport {
    validate_suite_with(manifest, SuiteExpectations::default())
}

fn relation_key(r: &PromptRecord) -> Option<(String, String, String)> {
    let rel = r.relations.first()?;
    let subject = r.objects.get(rel.subject_index)?;
    let object = r.objects.get(rel.object_index)?;
    Some((subject.noun.clone(), rel.word.clone(), object.noun.clone()))
}

pub fn validate_suite_with(manifest: &SuiteManifest, expect: SuiteExpectations) -> ValidationReport {
    let records = &manifest.records;
    let mut report = ValidationReport { total: records.len(), ..ValidationReport::default() };
    let mut problems = Vec::new();

    let mut ids = HashSet::new();
    for r in records {
        if !ids.insert(r.id.as_str()) {
            problems.push(format!("duplicate id `{}`", r.id));
        }
        if r.structure_missing {
            report.structure_missing += 1;
        }
        if let Err(e) = r.check_structure() {
            problems.push(e);
        }
        let entry = report.categories.entry(r.category).or_default();
        entry.total += 1;
        match r.split {
            Split::Train => entry.train += 1,
            Split::Test => entry.test += 1,
        }
        match r.novelty {
            Novelty::Seen => entry.seen += 1,
            Novelty::Unseen => entry.unseen += 1,
            Novelty::NotApplicable => {}
        }
    }

    for category in Category::ALL {
        let c = report.categories.entry(category).or_default().clone();
        if c.total != expect.per_category {
            problems.push(format!("{category}: {} prompts, expected {}", c.total, expect.per_category));
        }
        if c.train != expect.train || c.test != expect.per_category.saturating_sub(expect.train) {
            problems.push(format!("{category}: split {}/{} train/test", c.train, c.test));
        }
        if category.is_attribute() && (c.seen != expect.seen || c.unseen != expect.unseen) {
            problems.push(format!("{category}: {} seen / {} unseen test prompts", c.seen, c.unseen));
        }
    }

    let mut texts: HashMap<(Category, &str), usize> = HashMap::new();
    for r in records {
        *texts.entry((r.category, r.text.as_str())).or_default() += 1;
    }
    let mut duplicates: Vec<String> = texts
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|((c, t), n)| format!("{c}: `{t}` x{n}"))
        .collect();
    duplicates.sort();
    for d in &duplicates {
        problems.push(format!("duplicate prompt {d}"));
    }
    report.duplicates = duplicates;

    let spatial: Vec<&PromptRecord> =
        records.iter().filter(|r| r.category == Category::Spatial && !r.structure_missing).collect();
    let keys: HashSet<(String, String, String)> = spatial.iter().filter_map(|r| relation_key(r)).collect();
    for r in &spatial {
        if let Some((s, word, o)) = relation_key(r) {
            if DIRECTIONAL_WORDS.contains(&word.as_str()) && !keys.contains(&(o, word, s)) {
                report.orphans.push(r.id.clone());
                problems.push(format!("`{}` ({}) has no contrastive twin", r.text, r.id));
            }
        }
    }

    for category in Category::ALL.into_iter().filter(|c| c.is_attribute()) {
        let train: Vec<PromptRecord> = records
            .iter()
            .filter(|r| r.category == category && r.split == Split::Train)
            .cloned()
            .collect();
        let test: Vec<PromptRecord> = records
            .iter()
            .filter(|r| r.category == category && r.split == Split::Test)
            .cloned()
            .collect();
        if let Ok(expected) = assign_seen_unseen(&test, &train) {
            for (given, want) in test.iter().zip(&expected) {
                if !given.structure_missing && given.novelty != want.novelty {
                    problems.push(format!(
                        "{}: marked {:?} but compositions make it {:?}",
                        given.id, given.novelty, want.novelty
                    ));
                }
            }
        }
    }

    report.ok = problems.is_empty();
    report.problems = problems;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_not_ok() {
        let report = validate_suite(&SuiteManifest::default());
        assert!(!report.ok);
        assert_eq!(report.total, 0);
        assert!(report.categories.values().all(|c| c.total == 0));
    }
}
