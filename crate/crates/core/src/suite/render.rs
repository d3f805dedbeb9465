use super::{ObjectSpec, PromptRecord};

// Nouns that read as plurals and take no indefinite article.
const PLURAL_NOUNS: [&str; 8] =
    ["gloves", "sole shoes", "boots", "pencils", "chopsticks", "pants", "clouds", "shoes"];

/// Indefinite article for the word that follows it: "an" before a vowel.
pub fn article_for(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// "a big, green apple": article, comma-joined attributes, noun.
pub fn object_phrase(object: &ObjectSpec) -> String {
    let attrs: Vec<&str> = object.attributes.iter().map(|a| a.value.as_str()).collect();
    let core = if attrs.is_empty() {
        object.noun.clone()
    } else {
        format!("{} {}", attrs.join(", "), object.noun)
    };
    if PLURAL_NOUNS.contains(&object.noun.as_str()) {
        core
    } else {
        format!("{} {core}", article_for(&core))
    }
}

fn join_list(head: Option<String>, items: &[String]) -> String {
    let mut parts: Vec<String> = head.into_iter().chain(items.iter().cloned()).collect();
    match parts.len() {
        0 => String::new(),
        1 => parts.remove(0),
        2 => format!("{} and {}", parts[0], parts[1]),
        _ => {
            let last = parts.pop().unwrap_or_default();
            format!("{}, and {last}", parts.join(", "))
        }
    }
}

/// Renders a record's structure through the fixed templates.
///
/// Without relations the object phrases are listed ("X and Y", "X, Y, and Z").
/// With a relation the first one is rendered as "S {word} O" followed by the
/// remaining objects in order. Only the first relation contributes text.
pub fn render_template(record: &PromptRecord) -> String {
    let phrases: Vec<String> = record.objects.iter().map(object_phrase).collect();
    match record.relations.first() {
        None => join_list(None, &phrases),
        Some(rel) => {
            let (Some(subject), Some(object)) =
                (phrases.get(rel.subject_index), phrases.get(rel.object_index))
            else {
                return join_list(None, &phrases);
            };
            let head = format!("{subject} {} {object}", rel.word);
            let rest: Vec<String> = phrases
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != rel.subject_index && *i != rel.object_index)
                .map(|(_, p)| p.clone())
                .collect();
            join_list(Some(head), &rest)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{
        AttributeKind, AttributeSpec, Category, Novelty, RelationKind, RelationSpec, Source, Split,
    };

    fn record(objects: Vec<ObjectSpec>, relations: Vec<RelationSpec>) -> PromptRecord {
        PromptRecord {
            id: "t".into(),
            category: Category::Complex,
            split: Split::Train,
            novelty: Novelty::NotApplicable,
            text: String::new(),
            objects,
            relations,
            source: Source::Template,
            structure_missing: false,
        }
    }

    fn obj(noun: &str, attrs: &[(AttributeKind, &str)]) -> ObjectSpec {
        ObjectSpec::new(noun, attrs.iter().map(|(k, v)| AttributeSpec::new(*k, *v)).collect())
    }

    #[test]
    fn articles() {
        assert_eq!(article_for("apple"), "an");
        assert_eq!(article_for("oval"), "an");
        assert_eq!(article_for("red"), "a");
    }

    #[test]
    fn two_object_attribute_template() {
        let r = record(
            vec![
                obj("ball", &[(AttributeKind::Texture, "rubber")]),
                obj("bottle", &[(AttributeKind::Texture, "plastic")]),
            ],
            vec![],
        );
        assert_eq!(render_template(&r), "a rubber ball and a plastic bottle");
    }

    #[test]
    fn multiple_attributes_are_comma_joined() {
        let r = record(
            vec![
                obj("apple", &[(AttributeKind::Shape, "big"), (AttributeKind::Color, "green")]),
                obj("table", &[(AttributeKind::Shape, "tall"), (AttributeKind::Texture, "wooden")]),
            ],
            vec![],
        );
        assert_eq!(render_template(&r), "a big, green apple and a tall, wooden table");
    }

    #[test]
    fn relation_with_trailing_objects() {
        let r = record(
            vec![obj("girl", &[]), obj("horse", &[]), obj("cup", &[(AttributeKind::Color, "red")])],
            vec![RelationSpec {
                subject_index: 0,
                object_index: 1,
                word: "on the left of".into(),
                kind: RelationKind::Spatial,
            }],
        );
        assert_eq!(render_template(&r), "a girl on the left of a horse and a red cup");
    }

    #[test]
    fn three_objects_use_serial_comma() {
        let r = record(
            vec![
                obj("chair", &[(AttributeKind::Color, "blue")]),
                obj("table", &[(AttributeKind::Color, "black")]),
                obj("curtain", &[(AttributeKind::Color, "yellow")]),
            ],
            vec![],
        );
        assert_eq!(render_template(&r), "a blue chair, a black table, and a yellow curtain");
    }

    #[test]
    fn plural_nouns_take_no_article() {
        let r = record(
            vec![
                obj("chopsticks", &[(AttributeKind::Texture, "wooden")]),
                obj("gloves", &[(AttributeKind::Texture, "leather")]),
            ],
            vec![],
        );
        assert_eq!(render_template(&r), "wooden chopsticks and leather gloves");
    }
}
