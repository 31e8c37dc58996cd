//! Decision-level late fusion: per task, a tree classifier over the predicted labels
//! of the image, text and tabular classifiers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Record};
use crate::decision::ModalityDecision;
use crate::error::{Error, Result};
use crate::gbdt::{CategoricalMatrix, TreeEnsemble};
use crate::grid::{select_best, BoostGrid, GridPoint, GridResult};
use crate::schema::{Task, NA};
use crate::tabular::{fit_point, score};

/// Fixed column order of fusion inputs.
pub const FUSION_COLUMNS: [Modality; 3] = [Modality::Image, Modality::Text, Modality::Tabular];
pub const N_FOLDS: usize = 5;
const MIN_ROWS_PER_FOLD: usize = 5;

/// Single-modality decisions keyed by record id, per modality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionSet {
    by_modality: BTreeMap<Modality, HashMap<String, Vec<ModalityDecision>>>,
}

impl DecisionSet {
    pub fn insert(&mut self, record_id: &str, decisions: Vec<ModalityDecision>) {
        if let Some(first) = decisions.first() {
            self.by_modality.entry(first.modality).or_default().insert(record_id.to_string(), decisions);
        }
    }

    /// Predicted class of `modality` for a record and task, `None` when absent.
    pub fn class(&self, modality: Modality, record_id: &str, task: usize) -> Option<usize> {
        self.by_modality.get(&modality)?.get(record_id)?.iter().find(|d| d.task == task)?.class
    }

    pub fn decision(&self, modality: Modality, record_id: &str, task: usize) -> Option<&ModalityDecision> {
        self.by_modality.get(&modality)?.get(record_id)?.iter().find(|d| d.task == task)
    }
}

/// One record's fusion input: predicted class per column (`None` = `[NA]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionInputRow {
    pub record_id: String,
    pub columns: [Option<usize>; 3],
    pub target: Option<usize>,
}

impl FusionInputRow {
    fn encode(&self, subset: &[Modality]) -> Vec<u32> {
        subset.iter().map(|m| column_code(self.columns[column_index(*m)])).collect()
    }
}

fn column_index(m: Modality) -> usize {
    FUSION_COLUMNS.iter().position(|c| *c == m).expect("every modality is a fusion column")
}

fn column_code(c: Option<usize>) -> u32 {
    c.map_or(0, |c| c as u32 + 1)
}

/// Assembles the row of one record; absent decisions become `[NA]`.
pub fn fusion_row(record: &Record, decisions: &DecisionSet, task: &Task, task_index: usize) -> Result<FusionInputRow> {
    let mut columns = [None; 3];
    for (slot, m) in columns.iter_mut().zip(FUSION_COLUMNS) {
        *slot = decisions.class(m, &record.record_id, task_index);
        if let Some(c) = *slot {
            if c >= task.n_classes() {
                return Err(Error::Integrity(format!(
                    "{m} decision {c} for record `{}` outside vocabulary of `{}`",
                    record.record_id, task.name
                )));
            }
        }
    }
    Ok(FusionInputRow { record_id: record.record_id.clone(), columns, target: record.label(task_index) })
}

/// Rows for every record labeled for the task.
pub fn build_fusion_rows<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    decisions: &DecisionSet,
    task: &Task,
    task_index: usize,
) -> Result<Vec<FusionInputRow>> {
    records
        .into_iter()
        .filter(|r| r.label(task_index).is_some())
        .map(|r| fusion_row(r, decisions, task, task_index))
        .collect()
}

/// Fusion rows rendered with class names, for inspection.
pub fn rows_csv(rows: &[FusionInputRow], task: &Task) -> String {
    let name = |c: Option<usize>| c.map_or(NA.to_string(), |c| task.classes[c].clone());
    let mut s = String::from("record_id,image,text,tabular,target\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            crate::corpus::csv_field(&r.record_id),
            crate::corpus::csv_field(&name(r.columns[0])),
            crate::corpus::csv_field(&name(r.columns[1])),
            crate::corpus::csv_field(&name(r.columns[2])),
            crate::corpus::csv_field(&name(r.target))
        );
    }
    s
}

/// Fusion classifier for one task over a subset of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub task: String,
    pub task_index: usize,
    pub columns: Vec<Modality>,
    pub point: GridPoint,
    pub ensemble: TreeEnsemble<f64>,
}

/// Binding between a serialized ensemble and its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionManifest {
    pub task: String,
    pub task_index: usize,
    pub columns: Vec<Modality>,
    pub classes: Vec<String>,
    pub point: GridPoint,
    pub ensemble_file: String,
}

impl FusionModel {
    /// Every row gets a decision; an all-`[NA]` row falls back to what the trees
    /// learned for missing inputs.
    pub fn predict(&self, row: &FusionInputRow) -> Result<(usize, f64)> {
        self.ensemble.predict(&row.encode(&self.columns))
    }

    pub fn manifest(&self, task: &Task, ensemble_file: &str) -> FusionManifest {
        FusionManifest {
            task: self.task.clone(),
            task_index: self.task_index,
            columns: self.columns.clone(),
            classes: task.classes.clone(),
            point: self.point.clone(),
            ensemble_file: ensemble_file.to_string(),
        }
    }

    pub fn from_parts(manifest: &FusionManifest, ensemble: TreeEnsemble<f64>) -> Self {
        Self {
            task: manifest.task.clone(),
            task_index: manifest.task_index,
            columns: manifest.columns.clone(),
            point: manifest.point.clone(),
            ensemble,
        }
    }
}

fn check_subset(subset: &[Modality]) -> Result<Vec<Modality>> {
    if subset.is_empty() {
        return Err(Error::config("modality subset is empty"));
    }
    // canonical order, duplicates removed
    Ok(FUSION_COLUMNS.iter().copied().filter(|m| subset.contains(m)).collect())
}

fn labeled(rows: &[FusionInputRow]) -> Result<(Vec<&FusionInputRow>, Vec<usize>)> {
    let rows: Vec<&FusionInputRow> = rows.iter().filter(|r| r.target.is_some()).collect();
    let y = rows.iter().map(|r| r.target.unwrap()).collect();
    Ok((rows, y))
}

fn matrix(rows: &[&FusionInputRow], subset: &[Modality], n_classes: usize) -> Result<CategoricalMatrix> {
    CategoricalMatrix::new(vec![n_classes + 1; subset.len()], rows.iter().map(|r| r.encode(subset)).collect())
}

/// Seeded assignment of rows to folds; rows are ordered by record id first so the
/// split does not depend on input order.
pub fn assign_folds(rows: &[&FusionInputRow], n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].record_id.cmp(&rows[b].record_id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; rows.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % n_folds;
    }
    fold
}

/// Grid search with five-fold cross-validation on the given rows (mean fold
/// macro-F1), then a final fit of the winner on all rows.
pub fn tune_and_train_fusion(
    rows: &[FusionInputRow],
    subset: &[Modality],
    grid: &BoostGrid,
    task: &Task,
    task_index: usize,
) -> Result<(FusionModel, Vec<GridResult>)> {
    let subset = check_subset(subset)?;
    let points = grid.points()?;
    let (rows, y) = labeled(rows)?;
    if rows.len() < N_FOLDS * MIN_ROWS_PER_FOLD {
        return Err(Error::config(format!(
            "fusion for `{}` needs at least {} labeled rows for {N_FOLDS}-fold tuning, got {}",
            task.name,
            N_FOLDS * MIN_ROWS_PER_FOLD,
            rows.len()
        )));
    }
    let k = task.n_classes();
    let x = matrix(&rows, &subset, k)?;
    let folds = assign_folds(&rows, N_FOLDS, grid.seed);
    let split = |f: usize| {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, &g) in folds.iter().enumerate() {
            if g == f {
                te.push(i)
            } else {
                tr.push(i)
            }
        }
        (tr, te)
    };
    let fold_data: Vec<(CategoricalMatrix, Vec<usize>, Vec<Vec<u32>>, Vec<usize>)> = (0..N_FOLDS)
        .map(|f| {
            let (tr, te) = split(f);
            let xt = CategoricalMatrix::new(x.cardinalities.clone(), tr.iter().map(|&i| x.rows[i].clone()).collect())?;
            Ok((xt, tr.iter().map(|&i| y[i]).collect(), te.iter().map(|&i| x.rows[i].clone()).collect(), te.iter().map(|&i| y[i]).collect()))
        })
        .collect::<Result<_>>()?;
    let results = points
        .into_par_iter()
        .enumerate()
        .map(|(index, point)| {
            let (mut f1, mut acc) = (0.0, 0.0);
            for (xt, yt, xe, ye) in &fold_data {
                let e = fit_point(xt, yt, k, &point)?;
                let pred = xe.iter().map(|r| e.predict(r).map(|(c, _)| Some(c))).collect::<Result<Vec<_>>>()?;
                let (f, a) = score(&pred, ye, k);
                f1 += f;
                acc += a;
            }
            Ok(GridResult { index, point, macro_f1: f1 / N_FOLDS as f64, accuracy: acc / N_FOLDS as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&results).expect("grid is non-empty").point.clone();
    let ensemble = fit_point(&x, &y, k, &best)?;
    Ok((FusionModel { task: task.name.clone(), task_index, columns: subset, point: best, ensemble }, results))
}

/// Test-set macro-F1 and accuracy of a fusion model.
pub fn evaluate_fusion(model: &FusionModel, rows: &[FusionInputRow], n_classes: usize) -> Result<(f64, f64)> {
    let (rows, y) = labeled(rows)?;
    let pred = rows.iter().map(|r| model.predict(r).map(|(c, _)| Some(c))).collect::<Result<Vec<_>>>()?;
    Ok(score(&pred, &y, n_classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub columns: Vec<Modality>,
    pub test_macro_f1: f64,
    pub test_accuracy: f64,
}

/// Retrains fusion on each column subset and scores it on the test rows.
pub fn ablate_modalities(
    validation: &[FusionInputRow],
    test: &[FusionInputRow],
    subsets: &[Vec<Modality>],
    grid: &BoostGrid,
    task: &Task,
    task_index: usize,
) -> Result<Vec<AblationEntry>> {
    subsets
        .iter()
        .map(|s| {
            let (model, _) = tune_and_train_fusion(validation, s, grid, task, task_index)?;
            let (f1, acc) = evaluate_fusion(&model, test, task.n_classes())?;
            Ok(AblationEntry { columns: model.columns, test_macro_f1: f1, test_accuracy: acc })
        })
        .collect()
}

/// All non-empty column subsets, largest first.
pub fn all_subsets() -> Vec<Vec<Modality>> {
    let mut out: Vec<Vec<Modality>> = (1u8..8)
        .map(|mask| FUSION_COLUMNS.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, m)| *m).collect())
        .collect();
    out.sort_by(|a: &Vec<Modality>, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    out
}

pub fn subset_name(columns: &[Modality]) -> String {
    columns.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
}
