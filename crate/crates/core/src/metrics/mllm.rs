use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatQuery, MetricError, MetricKind, MetricResult, MetricScore, ScoreDetail};
use crate::backends::{ChatBackend, ImageRef};
use crate::suite::{object_phrase, AttributeKind, Category, PromptRecord};

/// A describe turn followed by a predict turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotTemplate {
    pub describe: String,
    pub predict: String,
}

/// Chain-of-thought prompts per category family.
///
/// Placeholders: `{attribute}` (color, shape or texture) in the attribute
/// describe prompt; `{adj.+noun}`, `{noun}` and `{adj}` in the attribute
/// predict prompt; `{xxx}` (the prompt text) elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotPromptSet {
    pub attribute: CotTemplate,
    pub spatial: CotTemplate,
    pub non_spatial: CotTemplate,
    pub complex: CotTemplate,
}

const JSON_TAIL: &str = "Provide your analysis and explanation in JSON format with the following keys: \
score (e.g., 85), explanation (within 20 words).";

impl Default for CotPromptSet {
    fn default() -> Self {
        let t = |describe: &str, predict: &str| CotTemplate {
            describe: describe.to_owned(),
            predict: format!("{predict}\n{JSON_TAIL}"),
        };
        Self {
            attribute: t(
                "You are my assistant to identify any objects and their {attribute} in the image.\n\
                 Briefly describe what it is in the image within 50 words.",
                "According to the image and your previous answer, evaluate if there is {adj.+noun} in the image.\n\
                 Give a score from 0 to 100, according the criteria:\n\
                 100: there is {noun}, and {noun} is {adj}.\n\
                 75: there is {noun}, {noun} is mostly {adj}.\n\
                 20: there is {noun}, but it is not {adj}.\n\
                 10: no {noun} in the image.",
            ),
            spatial: t(
                "You are my assistant to identify objects and their spatial layout in the image.\n\
                 Briefly describe the image within 50 words.",
                "According to the image and your previous answer, evaluate if the text \"{xxx}\" is correctly portrayed in the image.\n\
                 Give a score from 0 to 100, according the criteria:\n\
                 100: correct spatial layout in the image for all objects mentioned in the text.\n\
                 80: basically, spatial layout of objects matches the text.\n\
                 60: spatial layout not aligned properly with the text.\n\
                 40: image not aligned properly with the text.\n\
                 20: image almost irrelevant to the text.",
            ),
            non_spatial: t(
                "You are my assistant to identify the actions, events, objects and their relationships in the image.\n\
                 Briefly describe the image within 50 words.",
                "According to the image and your previous answer, evaluate if the text \"{xxx}\" is correctly portrayed in the image.\n\
                 Give a score from 0 to 100, according the criteria:\n\
                 100: the image accurately portrayed the actions, events and relationships between objects described in the text.\n\
                 80: the image portrayed most of the actions, events and relationships but with minor discrepancies.\n\
                 60: the image depicted some elements, but action relationships between objects are not correct.\n\
                 40: the image failed to convey the full scope of the text.\n\
                 20: the image did not depict any actions or events that match the text.",
            ),
            complex: t(
                "You are my assistant to evaluate the correspondence of the image to a given text prompt.\n\
                 Briefly describe the image within 50 words, focus on the objects in the image and their attributes \
                 (such as color, shape, texture), spatial layout and action relationships.",
                "According to the image and your previous answer, evaluate how well the image aligns with the text prompt: {xxx}.\n\
                 Give a score from 0 to 100, according the criteria:\n\
                 100: the image perfectly matches the content of the text prompt, with no discrepancies.\n\
                 80: the image portrayed most of the actions, events and relationships but with minor discrepancies.\n\
                 60: the image depicted some elements in the text prompt, but ignored some key parts or details.\n\
                 40: the image did not depict any actions or events that match the text.\n\
                 20: the image failed to convey the full scope in the text prompt.",
            ),
        }
    }
}

fn attribute_word(kind: AttributeKind) -> &'static str {
    match kind {
        AttributeKind::Color => "color",
        AttributeKind::Shape => "shape",
        AttributeKind::Texture => "texture",
    }
}

fn and_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

impl CotPromptSet {
    /// The (describe, predict) pair for a record.
    pub fn turns_for(&self, record: &PromptRecord) -> (String, String) {
        match record.category.attribute_kind() {
            Some(kind) => {
                let describe = self.attribute.describe.replace("{attribute}", attribute_word(kind));
                let nouns: Vec<String> = record.objects.iter().map(|o| o.noun.clone()).collect();
                let adjs: Vec<String> = record
                    .objects
                    .iter()
                    .filter(|o| !o.attributes.is_empty())
                    .map(|o| o.attributes.iter().map(|a| a.value.as_str()).collect::<Vec<_>>().join(", "))
                    .collect();
                let (nouns, adjs) = if record.objects.is_empty() {
                    (record.text.clone(), attribute_word(kind).to_owned())
                } else {
                    (and_list(&nouns), and_list(&adjs))
                };
                let predict = self
                    .attribute
                    .predict
                    .replace("{adj.+noun}", &record.text)
                    .replace("{noun}", &nouns)
                    .replace("{adj}", &adjs);
                (describe, predict)
            }
            None => {
                let t = match record.category {
                    Category::Spatial => &self.spatial,
                    Category::NonSpatial => &self.non_spatial,
                    _ => &self.complex,
                };
                (t.describe.clone(), t.predict.replace("{xxx}", &record.text))
            }
        }
    }
}

fn score_field(v: &Value) -> Option<f64> {
    let s = v.get("score")?;
    let n = match s {
        Value::Number(n) => n.as_f64()?,
        Value::String(t) => t.trim().parse().ok()?,
        _ => return None,
    };
    (0.0..=100.0).contains(&n).then_some(n)
}

/// Extracts a 0-100 score: the whole reply as JSON, then the first `{...}`
/// block, then the first integer in range.
pub fn parse_score(reply: &str) -> Option<f64> {
    static OBJECT: OnceLock<Regex> = OnceLock::new();
    static INTEGER: OnceLock<Regex> = OnceLock::new();
    if let Ok(v) = serde_json::from_str::<Value>(reply.trim()) {
        if let Some(s) = score_field(&v) {
            return Some(s);
        }
    }
    let object = OBJECT.get_or_init(|| Regex::new(r"\{[^{}]*\}").expect("valid regex"));
    for m in object.find_iter(reply) {
        if let Some(s) = serde_json::from_str::<Value>(m.as_str()).ok().as_ref().and_then(score_field) {
            return Some(s);
        }
    }
    let integer = INTEGER.get_or_init(|| Regex::new(r"\d+").expect("valid regex"));
    integer
        .find_iter(reply)
        .filter_map(|m| m.as_str().parse::<u64>().ok())
        .find(|n| *n <= 100)
        .map(|n| n as f64)
}

fn ask(chat: &dyn ChatBackend, image: &ImageRef, mut turns: Vec<String>) -> MetricResult<ChatQuery> {
    let reply = chat.chat(image, &turns)?;
    let score = parse_score(&reply);
    turns.push(reply);
    Ok(ChatQuery { turns, score, parse_failed: score.is_none() })
}

/// Two-turn describe-then-predict scoring.
pub fn mgpt_cot_score(
    image: &ImageRef,
    record: &PromptRecord,
    chat: &dyn ChatBackend,
    prompts: &CotPromptSet,
) -> MetricResult<MetricScore> {
    let (describe, predict) = prompts.turns_for(record);
    let description = chat.chat(image, std::slice::from_ref(&describe))?;
    let query = ask(chat, image, vec![describe, description, predict])?;
    let detail = ScoreDetail::Chat { queries: vec![query] };
    Ok(MetricScore::new(record, image, MetricKind::MgptCot, detail))
}

/// Single-turn scoring: one question per object for attribute categories,
/// one overall-alignment question otherwise.
pub fn mgpt_score(image: &ImageRef, record: &PromptRecord, chat: &dyn ChatBackend) -> MetricResult<MetricScore> {
    let questions: Vec<String> = match record.category.attribute_kind() {
        Some(kind) => {
            if record.structure_missing || record.objects.is_empty() {
                return Err(MetricError::StructureMissing { prompt_id: record.id.clone() });
            }
            record
                .objects
                .iter()
                .map(|o| {
                    let phrase = object_phrase(o);
                    let description = if o.attributes.is_empty() {
                        attribute_word(kind).to_owned()
                    } else {
                        o.attributes.iter().map(|a| a.value.as_str()).collect::<Vec<_>>().join(", ")
                    };
                    format!(
                        "Is there {phrase} in the image? Give a score from 0 to 100. \
                         If {phrase} is not present or if {phrase} is not {description}, give a lower score."
                    )
                })
                .collect()
        }
        None => vec![format!(
            "Rate the overall alignment between the image and the text prompt {}. Give a score from 0 to 100.",
            record.text
        )],
    };
    let queries = questions
        .into_iter()
        .map(|q| ask(chat, image, vec![q]))
        .collect::<MetricResult<Vec<_>>>()?;
    Ok(MetricScore::new(record, image, MetricKind::Mgpt, ScoreDetail::Chat { queries }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FakeChat;
    use crate::suite::{AttributeSpec, Novelty, ObjectSpec, Source, Split};
    use approx::assert_relative_eq;

    fn record(category: Category) -> PromptRecord {
        let color = |c: &str| vec![AttributeSpec::new(AttributeKind::Color, c)];
        PromptRecord {
            id: "p".into(),
            category,
            split: Split::Train,
            novelty: Novelty::NotApplicable,
            text: "a green bench and a red car".into(),
            objects: vec![ObjectSpec::new("bench", color("green")), ObjectSpec::new("car", color("red"))],
            relations: vec![],
            source: Source::Template,
            structure_missing: false,
        }
    }

    fn img() -> ImageRef {
        ImageRef::from_bytes("i", b"i", 512, 512)
    }

    #[test]
    fn parses_tolerantly() {
        assert_eq!(parse_score(r#"{"score": 85, "explanation": "ok"}"#), Some(85.0));
        assert_eq!(parse_score("Sure! {\"score\": \"40\", \"explanation\": \"x\"} done"), Some(40.0));
        assert_eq!(parse_score("Score: 100."), Some(100.0));
        assert_eq!(parse_score("I rate it 250 or maybe 70"), Some(70.0));
        assert_eq!(parse_score("no idea"), None);
        assert_eq!(parse_score(r#"{"score": 150}"#), None);
    }

    #[test]
    fn cot_runs_two_turns() {
        let chat = FakeChat::with_responder(0, |_, turns| {
            if turns.len() == 1 {
                "a bench next to a car".to_owned()
            } else {
                assert_eq!(turns[1], "a bench next to a car");
                r#"{"score": 85, "explanation": "close"}"#.to_owned()
            }
        });
        let s = mgpt_cot_score(&img(), &record(Category::Color), &chat, &CotPromptSet::default()).unwrap();
        assert_relative_eq!(s.value, 0.85, epsilon = 1e-12);
        let ScoreDetail::Chat { queries } = &s.detail else { panic!("chat detail") };
        assert_eq!(queries[0].turns.len(), 4);
        assert!(queries[0].turns[0].contains("their color in the image"));
        assert!(queries[0].turns[2].contains("evaluate if there is a green bench and a red car in the image"));
        assert!(queries[0].turns[2].contains("100: there is bench and car, and bench and car is green and red."));
    }

    #[test]
    fn cot_gibberish_scores_zero() {
        let chat = FakeChat::with_responder(0, |_, _| "blorp".to_owned());
        let s = mgpt_cot_score(&img(), &record(Category::Complex), &chat, &CotPromptSet::default()).unwrap();
        assert_eq!(s.value, 0.0);
        let ScoreDetail::Chat { queries } = &s.detail else { panic!("chat detail") };
        assert!(queries[0].parse_failed);
    }

    #[test]
    fn predict_prompts_request_json_scores() {
        let set = CotPromptSet::default();
        for c in Category::ALL {
            let (_, predict) = set.turns_for(&record(c));
            assert!(predict.contains("Give a score from 0 to 100"));
            assert!(predict.contains("JSON format"));
            assert!(!predict.contains('{'), "unfilled placeholder in {predict}");
        }
    }

    #[test]
    fn mgpt_averages_object_questions() {
        let chat = FakeChat::with_responder(0, |_, turns| {
            if turns[0].contains("green bench") { "80" } else { "60" }.to_owned()
        });
        let s = mgpt_score(&img(), &record(Category::Color), &chat).unwrap();
        assert_relative_eq!(s.value, 0.70, epsilon = 1e-12);

        let chat = FakeChat::with_responder(0, |_, turns| {
            if turns[0].contains("green bench") { "80" } else { "???" }.to_owned()
        });
        let s = mgpt_score(&img(), &record(Category::Color), &chat).unwrap();
        assert_relative_eq!(s.value, 0.40, epsilon = 1e-12);

        let chat = FakeChat::with_responder(0, |_, turns| {
            assert!(turns[0].starts_with("Rate the overall alignment"));
            "0".to_owned()
        });
        assert_eq!(mgpt_score(&img(), &record(Category::Spatial), &chat).unwrap().value, 0.0);
    }
}
