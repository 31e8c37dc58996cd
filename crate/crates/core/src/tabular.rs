//! Per-task tree classifiers over categorical record fields: the museum plus the
//! labels of every other task.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Record, RecordSet};
use crate::decision::ModalityDecision;
use crate::error::{Error, Result};
use crate::gbdt::{fit, CategoricalEncoder, CategoricalMatrix, TreeEnsemble};
use crate::grid::{select_best, BoostGrid, GridPoint, GridResult, SampleWeighting};
use crate::imbalance::sample_weights;
use crate::metrics::macro_f1;
use crate::schema::{TaskSchema, NA};

/// Feature rows and targets for one target task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularInput {
    pub target_task: usize,
    pub feature_names: Vec<String>,
    pub record_ids: Vec<String>,
    pub features: Vec<Vec<String>>,
    pub targets: Vec<usize>,
}

impl TabularInput {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn feature_names(schema: &TaskSchema, target_task: usize) -> Vec<String> {
    std::iter::once("museum".to_string())
        .chain(schema.tasks().iter().enumerate().filter(|(m, _)| *m != target_task).map(|(_, t)| t.name.clone()))
        .collect()
}

/// Museum followed by the class names of the non-target tasks, `[NA]` where unknown.
pub fn record_features(record: &Record, schema: &TaskSchema, target_task: usize) -> Vec<String> {
    let museum = if record.museum.is_empty() { NA.to_string() } else { record.museum.clone() };
    std::iter::once(museum)
        .chain(schema.tasks().iter().enumerate().filter(|(m, _)| *m != target_task).map(|(m, t)| match record.label(m) {
            Some(c) => t.classes[c].clone(),
            None => NA.to_string(),
        }))
        .collect()
}

/// Rows for every record labeled for `target_task`.
pub fn build_tabular_inputs<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    schema: &TaskSchema,
    target_task: &str,
) -> Result<TabularInput> {
    let target = schema.task_index(target_task)?;
    let mut out = TabularInput {
        target_task: target,
        feature_names: feature_names(schema, target),
        record_ids: Vec::new(),
        features: Vec::new(),
        targets: Vec::new(),
    };
    for r in records {
        if let Some(y) = r.label(target) {
            out.record_ids.push(r.record_id.clone());
            out.features.push(record_features(r, schema, target));
            out.targets.push(y);
        }
    }
    Ok(out)
}

/// Convenience over a whole record set.
pub fn build_from_set(set: &RecordSet, target_task: &str) -> Result<TabularInput> {
    build_tabular_inputs(&set.records, &set.schema, target_task)
}

/// Tree classifier bound to a target task and its feature vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub task: String,
    pub target_task: usize,
    pub n_classes: usize,
    pub encoder: CategoricalEncoder,
    pub point: GridPoint,
    pub ensemble: TreeEnsemble<f64>,
}

impl TabularModel {
    pub fn predict_features<S: AsRef<str>>(&self, row: &[S]) -> Result<(usize, f64)> {
        self.ensemble.predict(&self.encoder.encode(row)?)
    }

    /// Categorical fields are always present, so the decision is never missing.
    pub fn predict_record(&self, record: &Record, schema: &TaskSchema) -> Result<ModalityDecision> {
        let (c, p) = self.predict_features(&record_features(record, schema, self.target_task))?;
        Ok(ModalityDecision::predicted(Modality::Tabular, self.target_task, c, p))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn weights_for(point: &GridPoint, targets: &[usize], n_classes: usize) -> Option<Vec<f64>> {
    match point.sample_weight {
        SampleWeighting::None => None,
        SampleWeighting::Balanced => Some(sample_weights(targets, n_classes)),
    }
}

/// Fits one grid point on encoded rows.
pub fn fit_point(x: &CategoricalMatrix, targets: &[usize], n_classes: usize, point: &GridPoint) -> Result<TreeEnsemble<f64>> {
    let w = weights_for(point, targets, n_classes);
    fit(x, targets, n_classes, &point.params, w.as_deref())
}

fn predict_all(e: &TreeEnsemble<f64>, rows: &[Vec<u32>]) -> Result<Vec<Option<usize>>> {
    rows.iter().map(|r| e.predict(r).map(|(c, _)| Some(c))).collect()
}

pub(crate) fn score(pred: &[Option<usize>], truth: &[usize], n_classes: usize) -> (f64, f64) {
    let correct = pred.iter().zip(truth).filter(|(p, t)| **p == Some(**t)).count();
    let acc = if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };
    (macro_f1(pred, truth, n_classes), acc)
}

/// Exhaustive grid search scored by validation macro-F1; the winner is refit on the
/// training rows. Results come back in grid order.
pub fn grid_search_tabular(
    train: &TabularInput,
    validation: &TabularInput,
    grid: &BoostGrid,
    schema: &TaskSchema,
) -> Result<(TabularModel, Vec<GridResult>)> {
    let points = grid.points()?;
    if train.is_empty() {
        return Err(Error::config("no training rows for the tabular classifier"));
    }
    if train.target_task != validation.target_task {
        return Err(Error::config("training and validation rows target different tasks"));
    }
    let task = schema.task(train.target_task);
    let n_classes = task.n_classes();
    let encoder = CategoricalEncoder::fit(train.feature_names.clone(), &train.features)?;
    let x = CategoricalMatrix::new(encoder.cardinalities(), encoder.encode_all(&train.features)?)?;
    let val_rows = encoder.encode_all(&validation.features)?;
    let results = points
        .into_par_iter()
        .enumerate()
        .map(|(index, point)| {
            let e = fit_point(&x, &train.targets, n_classes, &point)?;
            let pred = predict_all(&e, &val_rows)?;
            let (macro_f1, accuracy) = score(&pred, &validation.targets, n_classes);
            Ok(GridResult { index, point, macro_f1, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&results).expect("grid is non-empty").point.clone();
    let ensemble = fit_point(&x, &train.targets, n_classes, &best)?;
    log::info!("tabular `{}`: best of {} grid points selected", task.name, results.len());
    let model = TabularModel { task: task.name.clone(), target_task: train.target_task, n_classes, encoder, point: best, ensemble };
    Ok((model, results))
}
