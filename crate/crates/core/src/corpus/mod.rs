//! Queries, blue-links, vertical modules and click logs.

mod clicks;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use clicks::{simulate_clicks, ClickModelConfig};
pub use io::{
    load_click_logs, load_dataset, load_schema, save_click_logs, save_dataset, save_schema,
    Dataset, CLICKS_FILE, DATASET_FILE, SCHEMA_FILE,
};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};

/// Grade on the ordinal relevance scale `0..=g_max`.
pub type Grade = u32;

pub const DEFAULT_G_MAX: Grade = 4;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}` has length {actual}, expected {expected}")]
    Dimension {
        line: usize,
        field: String,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalSchema {
    pub vertical_id: usize,
    pub name: String,
    pub raw_dim: usize,
}

/// Dataset-wide dimensions. Vertical 0 is the general web and only ever
/// contributes blue-links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub alpha: usize,
    pub g_max: Grade,
    pub verticals: Vec<VerticalSchema>,
}

impl Schema {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.alpha == 0 {
            return Err(CorpusError::Schema("alpha must be positive".into()));
        }
        if self.g_max == 0 {
            return Err(CorpusError::Schema("g_max must be at least 1".into()));
        }
        for (i, v) in self.verticals.iter().enumerate() {
            if v.vertical_id != i {
                return Err(CorpusError::Schema(format!(
                    "vertical ids must be contiguous from 0, found {} at position {i}",
                    v.vertical_id
                )));
            }
            if v.raw_dim == 0 {
                return Err(CorpusError::Schema(format!(
                    "vertical {} has raw_dim 0",
                    v.vertical_id
                )));
            }
        }
        if self.verticals.is_empty() {
            return Err(CorpusError::Schema("vertical 0 (general web) is missing".into()));
        }
        Ok(())
    }

    /// Number of module verticals `J` (excluding the general web).
    pub fn num_verticals(&self) -> usize {
        self.verticals.len().saturating_sub(1)
    }

    pub fn raw_dim(&self, vertical: usize) -> Option<usize> {
        self.verticals.get(vertical).map(|v| v.raw_dim)
    }

    /// Raw widths of verticals `1..=J`.
    pub fn module_raw_dims(&self) -> Vec<usize> {
        self.verticals.iter().skip(1).map(|v| v.raw_dim).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlueLink {
    pub doc_id: String,
    pub embedding: Vec<f64>,
    pub relevance: Grade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub module_id: String,
    pub vertical_id: usize,
    /// Concatenated per-document and structural features.
    pub raw_features: Vec<f64>,
    pub doc_grades: Vec<Grade>,
}

impl ModuleRecord {
    pub fn gain(&self) -> Grade {
        crate::metrics::module_gain(&self.doc_grades)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub embedding: Vec<f64>,
    pub blue_links: Vec<BlueLink>,
    pub modules: Vec<ModuleRecord>,
    /// Per-vertical weight in `[0, 1]`; entry 0 is the general web and equals 1.
    pub orientation: Vec<f64>,
}

impl QueryRecord {
    /// Checks every dimensional and range invariant against `schema`.
    /// `line` is only used for error reporting.
    pub fn validate(&self, schema: &Schema, line: usize) -> Result<(), CorpusError> {
        let dim = |field: String, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(CorpusError::Dimension {
                    line,
                    field,
                    expected,
                    actual,
                })
            }
        };
        let invalid = |reason: String| CorpusError::Invalid { line, reason };

        dim("embedding".into(), schema.alpha, self.embedding.len())?;
        finite("embedding", &self.embedding).map_err(invalid)?;
        dim(
            "orientation".into(),
            schema.verticals.len(),
            self.orientation.len(),
        )?;
        if self.orientation.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(invalid("orientation weights must lie in [0, 1]".into()));
        }
        if self.orientation.first() != Some(&1.0) {
            return Err(invalid("orientation[0] must be 1".into()));
        }
        for (i, d) in self.blue_links.iter().enumerate() {
            dim(
                format!("blue_links[{i}].embedding"),
                schema.alpha,
                d.embedding.len(),
            )?;
            finite("blue-link embedding", &d.embedding).map_err(invalid)?;
            if d.relevance > schema.g_max {
                return Err(invalid(format!(
                    "blue-link {} relevance {} exceeds g_max {}",
                    d.doc_id, d.relevance, schema.g_max
                )));
            }
        }
        let mut seen = vec![false; schema.verticals.len()];
        for (i, m) in self.modules.iter().enumerate() {
            if m.vertical_id == 0 || m.vertical_id >= schema.verticals.len() {
                return Err(invalid(format!(
                    "module {} has vertical_id {} outside 1..={}",
                    m.module_id,
                    m.vertical_id,
                    schema.num_verticals()
                )));
            }
            if std::mem::replace(&mut seen[m.vertical_id], true) {
                return Err(invalid(format!(
                    "more than one module for vertical {}",
                    m.vertical_id
                )));
            }
            dim(
                format!("modules[{i}].raw_features"),
                schema.verticals[m.vertical_id].raw_dim,
                m.raw_features.len(),
            )?;
            finite("module raw_features", &m.raw_features).map_err(invalid)?;
            if m.doc_grades.is_empty() {
                return Err(invalid(format!("module {} has no doc_grades", m.module_id)));
            }
            if m.doc_grades.iter().any(|&g| g > schema.g_max) {
                return Err(invalid(format!(
                    "module {} has a grade above g_max {}",
                    m.module_id, schema.g_max
                )));
            }
        }
        let mut ids: Vec<&str> = self.item_ids().collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("item ids must be unique within a query".into()));
        }
        Ok(())
    }

    /// Blue-link ids followed by module ids, in candidate order.
    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.blue_links
            .iter()
            .map(|d| d.doc_id.as_str())
            .chain(self.modules.iter().map(|m| m.module_id.as_str()))
    }

    pub fn candidate_count(&self) -> usize {
        self.blue_links.len() + self.modules.len()
    }
}

fn finite(what: &str, v: &[f64]) -> Result<(), String> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(format!("{what} contains non-finite values"))
    }
}

/// Clicks recorded for one impression list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLog {
    pub query_id: String,
    pub impressions: Vec<String>,
    pub clicks: Vec<bool>,
}

impl ClickLog {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.impressions.len() != self.clicks.len() {
            return Err(CorpusError::Invalid {
                line: 0,
                reason: format!(
                    "click log {} has {} impressions but {} click flags",
                    self.query_id,
                    self.impressions.len(),
                    self.clicks.len()
                ),
            });
        }
        Ok(())
    }

    pub fn click_count(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}
