//! Task and class vocabularies.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Missing-value token used for labels, categorical features and modality decisions.
pub const NA: &str = "[NA]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub classes: Vec<String>,
}

impl Task {
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Ordered list of prediction tasks with their class vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    tasks: Vec<Task>,
}

impl TaskSchema {
    /// Validates non-empty, duplicate-free vocabularies with at least two classes each.
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let mut names = HashSet::new();
        for task in &tasks {
            if !names.insert(task.name.as_str()) {
                return Err(Error::config(format!("duplicate task `{}`", task.name)));
            }
            if task.classes.len() < 2 {
                return Err(Error::config(format!(
                    "task `{}` needs at least two classes, has {}",
                    task.name,
                    task.classes.len()
                )));
            }
            let mut seen = HashSet::new();
            for c in &task.classes {
                if c.is_empty() || c == NA {
                    return Err(Error::config(format!("task `{}` has an invalid class `{c}`", task.name)));
                }
                if !seen.insert(c.as_str()) {
                    return Err(Error::config(format!("task `{}` lists class `{c}` twice", task.name)));
                }
            }
        }
        if tasks.is_empty() {
            return Err(Error::config("schema has no tasks"));
        }
        Ok(Self { tasks })
    }

    /// place(9), timespan(5), technique(4), material(3), classes sorted by corpus frequency.
    pub fn heritage_default() -> Self {
        let task = |name: &str, classes: &[&str]| Task {
            name: name.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        };
        Self::new(vec![
            task("place", &["FR", "IT", "GB", "ES", "IN", "CN", "IR", "JP", "TR"]),
            task("timespan", &["XIX", "XVIII", "XX", "XVII", "XVI"]),
            task("technique", &["embroidery", "velvet", "damask", "other"]),
            task("material", &["animal fibre", "vegetable fibre", "metal thread"]),
        ])
        .expect("default schema is valid")
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, index: usize) -> &Task {
        &self.tasks[index]
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    pub fn task_names(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.name.as_str())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.tasks.iter().map(Task::n_classes).collect()
    }

    /// Drops classes rejected by `keep`. Used by corpus filtering, which is total,
    /// so the two-class minimum is not re-checked here.
    pub(crate) fn retain_classes(&mut self, mut keep: impl FnMut(usize, &str) -> bool) {
        for (ti, task) in self.tasks.iter_mut().enumerate() {
            task.classes.retain(|c| keep(ti, c));
        }
    }
}
