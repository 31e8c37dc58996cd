//! Confusion matrices, per-class precision/recall/F1, macro-F1 and overall accuracy.

mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Task;

pub use render::{comparison_csv, confusion_csv, confusion_png, render_reports, report_csv, ComparisonColumn};

/// `counts[i][j]`: truth `i` predicted `j`. `missing[i]` counts records of truth
/// `i` that received no prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: String,
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub missing: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.missing.iter().sum::<usize>()
    }

    pub fn correct(&self) -> usize {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub overall_accuracy: f64,
    pub n: usize,
    pub n_missing: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions against truths. A missing prediction is a false negative for
/// its truth class and a false positive for no class.
pub fn evaluate(task: &Task, predictions: &[Option<usize>], truths: &[usize]) -> Result<(TaskReport, ConfusionMatrix)> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape { expected: truths.len(), got: predictions.len() });
    }
    let k = task.n_classes();
    let mut counts = vec![vec![0usize; k]; k];
    let mut missing = vec![0usize; k];
    for (p, &t) in predictions.iter().zip(truths) {
        if t >= k {
            return Err(Error::Integrity(format!("truth class {t} outside vocabulary of `{}`", task.name)));
        }
        match *p {
            Some(p) if p >= k => {
                return Err(Error::Integrity(format!("predicted class {p} outside vocabulary of `{}`", task.name)))
            }
            Some(p) => counts[t][p] += 1,
            None => missing[t] += 1,
        }
    }
    let matrix = ConfusionMatrix { task: task.name.clone(), classes: task.classes.clone(), counts, missing };
    Ok((report_from_matrix(&matrix), matrix))
}

pub fn report_from_matrix(m: &ConfusionMatrix) -> TaskReport {
    let k = m.n_classes();
    let per_class: Vec<ClassScore> = (0..k)
        .map(|i| {
            let tp = m.counts[i][i];
            let predicted: usize = (0..k).map(|t| m.counts[t][i]).sum();
            let support = m.counts[i].iter().sum::<usize>() + m.missing[i];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScore { class: m.classes[i].clone(), precision, recall, f1, support }
        })
        .collect();
    let macro_f1 = if k == 0 { 0.0 } else { per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64 };
    let n = m.total();
    TaskReport {
        task: m.task.clone(),
        per_class,
        macro_f1,
        overall_accuracy: ratio(m.correct(), n),
        n,
        n_missing: m.missing.iter().sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossTaskSummary {
    pub macro_f1: f64,
    pub overall_accuracy: f64,
}

/// Unweighted mean over tasks.
pub fn cross_task_average(reports: &[TaskReport]) -> Result<CrossTaskSummary> {
    if reports.is_empty() {
        return Err(Error::config("no task reports to average"));
    }
    let n = reports.len() as f64;
    Ok(CrossTaskSummary {
        macro_f1: reports.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        overall_accuracy: reports.iter().map(|r| r.overall_accuracy).sum::<f64>() / n,
    })
}

/// Macro-F1 of class-index predictions over `n_classes` classes, for model selection.
pub fn macro_f1(predictions: &[Option<usize>], truths: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (p, &t) in predictions.iter().zip(truths) {
        support[t] += 1;
        if let Some(p) = *p {
            predicted[p] += 1;
            if p == t {
                tp[t] += 1;
            }
        }
    }
    let f1 = |c: usize| {
        if tp[c] == 0 {
            return 0.0;
        }
        let (p, r) = (ratio(tp[c], predicted[c]), ratio(tp[c], support[c]));
        2.0 * p * r / (p + r)
    };
    if n_classes == 0 {
        return 0.0;
    }
    (0..n_classes).map(f1).sum::<f64>() / n_classes as f64
}
