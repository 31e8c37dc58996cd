use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../../../data/grouping.tsv");

/// Raw annotation string to group label, per task.
///
/// Lookup trims and lower-cases the raw string. A group label always maps to itself.
#[derive(Debug, Clone, Default)]
pub struct GroupingTable {
    entries: HashMap<(String, String), String>,
    groups: HashMap<(String, String), String>,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl GroupingTable {
    /// Parses `raw_label <TAB> task <TAB> group_label` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("grouping table line needs 3 tab-separated fields, found {}", fields.len()),
                });
            }
            table.insert(fields[0], fields[1], fields[2]);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The table shipped with the repository, covering the default schema.
    pub fn heritage_default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled grouping table parses")
    }

    pub fn insert(&mut self, raw: &str, task: &str, group: &str) {
        let task = task.trim().to_string();
        let group = group.trim().to_string();
        self.groups.insert((task.clone(), fold(&group)), group.clone());
        self.entries.insert((task, fold(raw)), group);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn map(&self, task: &str, raw: &str) -> Result<String> {
        let key = (task.to_string(), fold(raw));
        self.entries
            .get(&key)
            .or_else(|| self.groups.get(&key))
            .cloned()
            .ok_or_else(|| Error::UnmappedLabel(raw.to_string()))
    }

    pub fn tasks(&self) -> HashSet<&str> {
        self.entries.keys().map(|(t, _)| t.as_str()).collect()
    }
}

/// Maps a raw annotation to its group label for `task`.
pub fn map_group_label(raw: &str, task: &str, mapping: &GroupingTable) -> Result<String> {
    mapping.map(task, raw)
}
