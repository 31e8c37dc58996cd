use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::TaskSchema;

/// The three information channels of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
    Tabular,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Text, Modality::Tabular];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Tabular => "tabular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            "tabular" => Ok(Modality::Tabular),
            other => Err(Error::config(format!("unknown modality `{other}`"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One museum object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub museum: String,
    pub text: Option<String>,
    /// Image references as listed in the CSV, kept for modality accounting.
    pub image_refs: Vec<String>,
    pub image_embeddings: Vec<Vec<f32>>,
    pub text_embedding: Option<Vec<f32>>,
    /// Class index per schema task; `None` when the label is missing.
    pub labels: Vec<Option<usize>>,
}

impl Record {
    pub fn has_image(&self) -> bool {
        !self.image_refs.is_empty() || !self.image_embeddings.is_empty()
    }

    pub fn has_text(&self) -> bool {
        self.text.is_some() || self.text_embedding.is_some()
    }

    pub fn is_unlabeled(&self) -> bool {
        self.labels.iter().all(Option::is_none)
    }

    pub fn label(&self, task: usize) -> Option<usize> {
        self.labels.get(task).copied().flatten()
    }

    /// Embeddings available to the neural classifier of `modality`.
    pub fn embeddings(&self, modality: Modality) -> Vec<&[f32]> {
        match modality {
            Modality::Image => self.image_embeddings.iter().map(Vec::as_slice).collect(),
            Modality::Text => self.text_embedding.iter().map(Vec::as_slice).collect(),
            Modality::Tabular => Vec::new(),
        }
    }
}

/// Records sharing one schema and one embedding dimension per modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub schema: TaskSchema,
    pub records: Vec<Record>,
    pub image_dim: Option<usize>,
    pub text_dim: Option<usize>,
}

impl RecordSet {
    pub fn new(schema: TaskSchema) -> Self {
        Self { schema, records: Vec::new(), image_dim: None, text_dim: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self, modality: Modality) -> Option<usize> {
        match modality {
            Modality::Image => self.image_dim,
            Modality::Text => self.text_dim,
            Modality::Tabular => None,
        }
    }

    /// Checks embedding dimensions and label ranges.
    pub fn validate(&self) -> Result<()> {
        let counts = self.schema.class_counts();
        for r in &self.records {
            if r.labels.len() != counts.len() {
                return Err(Error::Integrity(format!(
                    "record {} has {} label slots, schema has {} tasks",
                    r.record_id,
                    r.labels.len(),
                    counts.len()
                )));
            }
            for (t, l) in r.labels.iter().enumerate() {
                if let Some(c) = l {
                    if *c >= counts[t] {
                        return Err(Error::Integrity(format!(
                            "record {} has class index {c} for task {}",
                            r.record_id,
                            self.schema.task(t).name
                        )));
                    }
                }
            }
            for e in &r.image_embeddings {
                check_dim(self.image_dim, e.len())?;
            }
            if let Some(e) = &r.text_embedding {
                check_dim(self.text_dim, e.len())?;
            }
        }
        Ok(())
    }

    pub fn by_id(&self) -> std::collections::HashMap<&str, &Record> {
        self.records.iter().map(|r| (r.record_id.as_str(), r)).collect()
    }
}

fn check_dim(expected: Option<usize>, got: usize) -> Result<()> {
    match expected {
        Some(d) if d == got => Ok(()),
        Some(d) => Err(Error::Shape { expected: d, got }),
        None => Err(Error::Integrity("embedding present but corpus dimension unset".into())),
    }
}
