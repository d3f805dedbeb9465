use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Category, Novelty, ObjectSpec, PromptRecord, RelationSpec, Result, Source, Split, SuiteError,
};

/// One line of the structured-metadata sidecar that accompanies a prompt file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty: Option<Novelty>,
}

/// `prompts.txt` pairs with `prompts.meta.jsonl`.
pub fn sidecar_path(prompt_path: &Path) -> PathBuf {
    prompt_path.with_extension("meta.jsonl")
}

fn file_error(path: &Path, message: impl Into<String>) -> SuiteError {
    SuiteError::File { path: path.display().to_string(), message: message.into() }
}

fn non_empty_lines(text: &str) -> Vec<&str> {
    text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.trim().is_empty()).collect()
}

/// Reads a one-prompt-per-line file and, when present, its JSON-lines sidecar.
/// Without a sidecar every record is flagged `structure_missing`.
pub fn load_prompt_file(path: &Path, category: Category, split: Split) -> Result<Vec<PromptRecord>> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| file_error(path, "not valid UTF-8"))?;
    let prompts = non_empty_lines(&text);
    if prompts.is_empty() {
        return Err(file_error(path, "prompt file is empty"));
    }
    let sidecar = sidecar_path(path);
    let entries: Option<Vec<SidecarEntry>> = if sidecar.exists() {
        let raw = fs::read_to_string(&sidecar)?;
        let lines = non_empty_lines(&raw);
        if lines.len() != prompts.len() {
            return Err(file_error(
                &sidecar,
                format!("{} metadata lines for {} prompts", lines.len(), prompts.len()),
            ));
        }
        let parsed = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| file_error(&sidecar, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<SidecarEntry>>>()?;
        Some(parsed)
    } else {
        None
    };

    let mut texts = HashSet::new();
    let mut records = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let prompt = prompt.trim();
        if !texts.insert(prompt.to_owned()) {
            return Err(file_error(path, format!("duplicate prompt `{prompt}` on line {}", i + 1)));
        }
        let default_id = format!("{category}_{split:?}_{i:04}").to_lowercase();
        let record = match entries.as_ref().map(|e| &e[i]) {
            Some(entry) => {
                if let Some(t) = &entry.text {
                    if t.trim() != prompt {
                        return Err(file_error(
                            &sidecar,
                            format!("line {}: metadata text `{t}` differs from prompt `{prompt}`", i + 1),
                        ));
                    }
                }
                let record = PromptRecord {
                    id: entry.id.clone().unwrap_or(default_id),
                    category,
                    split,
                    novelty: entry.novelty.unwrap_or(Novelty::NotApplicable),
                    text: prompt.to_owned(),
                    objects: entry.objects.clone(),
                    relations: entry.relations.clone(),
                    source: entry.source.unwrap_or(Source::Chatgpt),
                    structure_missing: false,
                };
                record.check_structure().map_err(|m| file_error(&sidecar, m))?;
                record
            }
            None => PromptRecord {
                id: default_id,
                category,
                split,
                novelty: Novelty::NotApplicable,
                text: prompt.to_owned(),
                objects: Vec::new(),
                relations: Vec::new(),
                source: Source::Chatgpt,
                structure_missing: true,
            },
        };
        records.push(record);
    }
    Ok(records)
}

/// Writes records as a prompt file plus sidecar, the inverse of
/// [`load_prompt_file`]. Records without structure get no sidecar line, so
/// exporting them together with structured records is an error.
pub fn export_prompt_file(records: &[PromptRecord], path: &Path) -> Result<()> {
    let missing = records.iter().filter(|r| r.structure_missing).count();
    if missing != 0 && missing != records.len() {
        return Err(SuiteError::Invalid(
            "cannot export structured and unstructured prompts into one file".into(),
        ));
    }
    let mut prompts = String::new();
    let mut sidecar = String::new();
    for r in records {
        prompts.push_str(&r.text);
        prompts.push('\n');
        let entry = SidecarEntry {
            id: Some(r.id.clone()),
            text: Some(r.text.clone()),
            objects: r.objects.clone(),
            relations: r.relations.clone(),
            source: Some(r.source),
            novelty: (r.novelty != Novelty::NotApplicable).then_some(r.novelty),
        };
        sidecar.push_str(&serde_json::to_string(&entry)?);
        sidecar.push('\n');
    }
    fs::write(path, prompts)?;
    if missing == 0 {
        fs::write(sidecar_path(path), sidecar)?;
    }
    Ok(())
}
