//! Per-category, per-model benchmark tables and leader rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricKind, Summary};
use crate::suite::Category;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate cell {model}/{category}/{column}")]
    Duplicate { model: String, category: Category, column: String },
}

pub type ReportResult<T> = Result<T, ReportError>;

/// A metric column or the human-evaluation column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Metric(MetricKind),
    Human,
}

impl Column {
    pub fn as_str(self) -> &'static str {
        match self {
            Column::Metric(m) => m.as_str(),
            Column::Human => "human",
        }
    }

    pub fn parse(s: &str) -> ReportResult<Self> {
        if s.eq_ignore_ascii_case("human") {
            return Ok(Column::Human);
        }
        s.parse().map(Column::Metric).map_err(|_| ReportError::UnknownColumn(s.to_owned()))
    }
}

impl Serialize for Column {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Column {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Column::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub category: Category,
    pub metric: Column,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub cells: Vec<Cell>,
}

/// Models ranked for one (category, column), best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub category: Category,
    pub metric: Column,
    pub order: Vec<(String, f64)>,
}

impl Ranking {
    /// Every model tied for the top value.
    pub fn leaders(&self) -> Vec<&str> {
        let Some((_, best)) = self.order.first() else { return Vec::new() };
        self.order.iter().take_while(|(_, v)| v == best).map(|(m, _)| m.as_str()).collect()
    }
}

impl ReportTable {
    pub fn from_json(text: &str) -> ReportResult<Self> {
        let table: Self = serde_json::from_str(text)
            .map_err(|e| ReportError::File { path: "<fixture>".into(), message: e.to_string() })?;
        table.check()?;
        Ok(table)
    }

    pub fn read(path: &Path) -> ReportResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text).map_err(|e| match e {
            ReportError::File { message, .. } => ReportError::File { path: path.display().to_string(), message },
            other => other,
        })
    }

    /// Category means of evaluation summaries, one per model.
    pub fn from_summaries<'a>(summaries: impl IntoIterator<Item = (&'a str, &'a Summary)>) -> Self {
        let mut cells = Vec::new();
        for (model, summary) in summaries {
            for (metric, s) in &summary.metrics {
                for (category, value) in &s.category_means {
                    cells.push(Cell {
                        model: model.to_owned(),
                        category: *category,
                        metric: Column::Metric(*metric),
                        value: *value,
                    });
                }
            }
        }
        Self { source: None, cells }
    }

    pub fn merge(mut self, other: ReportTable) -> ReportResult<Self> {
        self.cells.extend(other.cells);
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> ReportResult<()> {
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            if !seen.insert((c.model.as_str(), c.category, c.metric)) {
                return Err(ReportError::Duplicate {
                    model: c.model.clone(),
                    category: c.category,
                    column: c.metric.as_str().to_owned(),
                });
            }
        }
        Ok(())
    }

    /// Models in first-appearance order.
    pub fn models(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.model.as_str()) {
                out.push(&c.model);
            }
        }
        out
    }

    pub fn value(&self, model: &str, category: Category, metric: Column) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.category == category && c.metric == metric)
            .map(|c| c.value)
    }

    pub fn ranking(&self, category: Category, metric: Column) -> Ranking {
        let mut order: Vec<(String, f64)> = self
            .cells
            .iter()
            .filter(|c| c.category == category && c.metric == metric)
            .map(|c| (c.model.clone(), c.value))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ranking { category, metric, order }
    }

    pub fn rankings(&self) -> Vec<Ranking> {
        let keys: BTreeSet<(Category, Column)> = self.cells.iter().map(|c| (c.category, c.metric)).collect();
        keys.into_iter().map(|(c, m)| self.ranking(c, m)).collect()
    }

    /// One block per category: model rows, metric columns, leaders starred.
    pub fn render(&self) -> String {
        let models = self.models();
        let width = models.iter().map(|m| m.len()).max().unwrap_or(5).max(5) + 2;
        let mut by_category: BTreeMap<Category, BTreeSet<Column>> = BTreeMap::new();
        for c in &self.cells {
            by_category.entry(c.category).or_default().insert(c.metric);
        }
        let mut out = String::new();
        for (category, columns) in by_category {
            out.push_str(&format!("[{category}]\n{:<width$}", "model"));
            for col in &columns {
                out.push_str(&format!("{:>14}", col.as_str()));
            }
            out.push('\n');
            let leaders: BTreeMap<Column, Vec<String>> = columns
                .iter()
                .map(|col| {
                    let r = self.ranking(category, *col);
                    (*col, r.leaders().into_iter().map(str::to_owned).collect())
                })
                .collect();
            for model in &models {
                if !columns.iter().any(|col| self.value(model, category, *col).is_some()) {
                    continue;
                }
                out.push_str(&format!("{model:<width$}"));
                for col in &columns {
                    let cell = match self.value(model, category, *col) {
                        Some(v) => {
                            let star = if leaders[col].iter().any(|l| l == model) { "*" } else { " " };
                            format!("{v:.4}{star}")
                        }
                        None => "-".to_owned(),
                    };
                    out.push_str(&format!("{cell:>14}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
