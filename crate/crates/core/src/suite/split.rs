use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;

use super::generate::{prompts_from_pairs, swap_relation};
use super::{
    Category, Novelty, PromptRecord, Result, Split, SuiteError, Vocabulary, DIRECTIONAL_WORDS,
};
use crate::util::seeded_rng;

/// The (attribute value, noun) pairs a record binds.
pub fn attribute_pairs(record: &PromptRecord) -> Vec<(String, String)> {
    record
        .objects
        .iter()
        .flat_map(|o| o.attributes.iter().map(move |a| (a.value.clone(), o.noun.clone())))
        .collect()
}

/// Marks each attribute test record `unseen` when none of its
/// (attribute, noun) pairs occurs in any training record, `seen` otherwise.
/// Records without structure are left `not_applicable`.
pub fn assign_seen_unseen(
    test_records: &[PromptRecord],
    train_records: &[PromptRecord],
) -> Result<Vec<PromptRecord>> {
    let mut category: Option<Category> = None;
    for r in test_records.iter().chain(train_records) {
        if !r.category.is_attribute() {
            return Err(SuiteError::Invalid(format!(
                "seen/unseen applies to attribute categories only, `{}` is {}",
                r.id, r.category
            )));
        }
        match category {
            None => category = Some(r.category),
            Some(c) if c != r.category => {
                return Err(SuiteError::Invalid(format!(
                    "mixed categories {c} and {} in seen/unseen assignment",
                    r.category
                )))
            }
            Some(_) => {}
        }
    }
    let train_pairs: HashSet<(String, String)> =
        train_records.iter().flat_map(attribute_pairs).collect();
    Ok(test_records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.novelty = if r.structure_missing || r.objects.is_empty() {
                Novelty::NotApplicable
            } else if attribute_pairs(&r).iter().any(|p| train_pairs.contains(p)) {
                Novelty::Seen
            } else {
                Novelty::Unseen
            };
            r
        })
        .collect())
}

/// Generates a complete attribute category already split so that the test
/// set holds exactly `seen` seen and `unseen` unseen compositions.
///
/// A small block of (attribute, noun) pairs is held out for the unseen
/// prompts; training and seen-test prompts use the rest. Each seen-test prompt
/// keeps a witness pair that still occurs in training after selection.
pub fn split_attribute_category(
    category: Category,
    vocab: &Vocabulary,
    seed: u64,
    train: usize,
    seen: usize,
    unseen: usize,
) -> Result<Vec<PromptRecord>> {
    let kind = category
        .attribute_kind()
        .ok_or_else(|| SuiteError::Config(format!("{category} is not an attribute category")))?;
    let mut pairs = vocab.attribute_pairs(kind);
    if pairs.len() < 4 {
        return Err(SuiteError::Config(format!("empty vocabulary for {category}")));
    }
    let mut rng = seeded_rng(seed, &format!("split/{category}"));
    pairs.shuffle(&mut rng);

    let mut held = ((unseen as f64).sqrt().ceil() as usize + 3).min(pairs.len() / 2);
    let (unseen_records, taken, rest) = loop {
        let (held_out, rest) = pairs.split_at(held);
        let mut taken = HashSet::new();
        match prompts_from_pairs(category, held_out, unseen, &mut rng, &mut taken) {
            Ok(records) => break (records, taken, rest.to_vec()),
            Err(_) if held * 2 < pairs.len() => held += 2,
            Err(e) => return Err(e),
        }
    };
    let mut taken = taken;
    let pool = prompts_from_pairs(category, &rest, train + seen, &mut rng, &mut taken)?;

    let mut available: HashMap<(String, String), usize> = HashMap::new();
    for r in &pool {
        for p in attribute_pairs(r) {
            *available.entry(p).or_default() += 1;
        }
    }
    let mut required: HashMap<(String, String), usize> = HashMap::new();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    let mut seen_idx = HashSet::new();
    for i in order {
        if seen_idx.len() == seen {
            break;
        }
        let own = attribute_pairs(&pool[i]);
        let keeps_requirements = own.iter().all(|p| {
            let uses = own.iter().filter(|q| *q == p).count();
            available[p] - uses >= required.get(p).copied().unwrap_or(0)
        });
        if !keeps_requirements {
            continue;
        }
        let witness = own.iter().find(|p| {
            let uses = own.iter().filter(|q| q == p).count();
            available[*p] - uses >= 1
        });
        let Some(witness) = witness.cloned() else {
            continue;
        };
        for p in &own {
            if let Some(n) = available.get_mut(p) {
                *n -= 1;
            }
        }
        let need = required.entry(witness).or_default();
        *need = (*need).max(1);
        seen_idx.insert(i);
    }
    if seen_idx.len() < seen {
        return Err(SuiteError::Config(format!(
            "could only place {} of {seen} seen test prompts for {category}",
            seen_idx.len()
        )));
    }

    let (mut train_records, mut test_records): (Vec<PromptRecord>, Vec<PromptRecord>) =
        (Vec::new(), Vec::new());
    for (i, mut r) in pool.into_iter().enumerate() {
        if seen_idx.contains(&i) {
            r.split = Split::Test;
            test_records.push(r);
        } else {
            r.split = Split::Train;
            r.novelty = Novelty::NotApplicable;
            train_records.push(r);
        }
    }
    for mut r in unseen_records {
        r.split = Split::Test;
        test_records.push(r);
    }
    let test_records = assign_seen_unseen(&test_records, &train_records)?;
    let unseen_count = test_records.iter().filter(|r| r.novelty == Novelty::Unseen).count();
    if unseen_count != unseen {
        return Err(SuiteError::Invalid(format!(
            "{category}: expected {unseen} unseen test prompts, got {unseen_count}"
        )));
    }
    train_records.extend(test_records);
    Ok(train_records)
}

fn contrastive_key(record: &PromptRecord) -> Option<(String, String)> {
    let rel = record.relations.first()?;
    if !DIRECTIONAL_WORDS.contains(&rel.word.as_str()) {
        return None;
    }
    let twin = swap_relation(record);
    let (a, b) = (record.text.clone(), twin.text);
    Some(if a <= b { (a, b) } else { (b, a) })
}

/// Seeded train/test split keeping contrastive twins on the same side.
pub fn split_plain(
    records: Vec<PromptRecord>,
    train: usize,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    if train > records.len() {
        return Err(SuiteError::Config(format!(
            "cannot take {train} training prompts from {}",
            records.len()
        )));
    }
    let mut units: Vec<Vec<PromptRecord>> = Vec::new();
    let mut unit_of: HashMap<(String, String), usize> = HashMap::new();
    for r in records {
        match contrastive_key(&r) {
            Some(key) => match unit_of.get(&key) {
                Some(&u) => units[u].push(r),
                None => {
                    unit_of.insert(key, units.len());
                    units.push(vec![r]);
                }
            },
            None => units.push(vec![r]),
        }
    }
    let mut rng = seeded_rng(seed, "split/plain");
    units.shuffle(&mut rng);
    let mut taken = 0;
    let mut assignment = vec![Split::Test; units.len()];
    for (u, unit) in units.iter().enumerate() {
        if taken + unit.len() <= train {
            taken += unit.len();
            assignment[u] = Split::Train;
        }
    }
    if taken != train {
        return Err(SuiteError::Config(format!(
            "contrastive grouping prevents an exact {train}-prompt training split"
        )));
    }
    let mut out = Vec::new();
    for (unit, split) in units.into_iter().zip(assignment) {
        for mut r in unit {
            r.split = split;
            r.novelty = Novelty::NotApplicable;
            out.push(r);
        }
    }
    Ok(out)
}
