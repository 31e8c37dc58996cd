use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::NA;

/// Category vocabulary per feature column. Code 0 is always `[NA]`; other
/// categories are numbered from 1 in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub names: Vec<String>,
    pub categories: Vec<Vec<String>>,
}

impl CategoricalEncoder {
    pub fn fit<S: AsRef<str>>(names: Vec<String>, rows: &[Vec<S>]) -> Result<Self> {
        let mut seen: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); names.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(Error::Parse { row: i + 1, message: format!("expected {} features, got {}", names.len(), row.len()) });
            }
            for (set, v) in seen.iter_mut().zip(row) {
                let v = v.as_ref();
                if v != NA && !v.is_empty() {
                    set.insert(v);
                }
            }
        }
        let categories = seen
            .into_iter()
            .map(|set| std::iter::once(NA.to_string()).chain(set.into_iter().map(str::to_string)).collect())
            .collect();
        Ok(Self { names, categories })
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categories.iter().map(Vec::len).collect()
    }

    /// Unknown values and `[NA]` encode to 0.
    pub fn encode_value(&self, feature: usize, value: &str) -> u32 {
        self.categories[feature].iter().position(|c| c == value).unwrap_or(0) as u32
    }

    pub fn encode<S: AsRef<str>>(&self, row: &[S]) -> Result<Vec<u32>> {
        if row.len() != self.n_features() {
            return Err(Error::Shape { expected: self.n_features(), got: row.len() });
        }
        Ok(row.iter().enumerate().map(|(f, v)| self.encode_value(f, v.as_ref())).collect())
    }

    pub fn encode_all<S: AsRef<str>>(&self, rows: &[Vec<S>]) -> Result<Vec<Vec<u32>>> {
        rows.iter().map(|r| self.encode(r)).collect()
    }
}
