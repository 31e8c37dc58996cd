//! Hyperparameter grids for the tree booster and deterministic winner selection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::BoostParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleWeighting {
    #[default]
    None,
    Balanced,
}

impl SampleWeighting {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleWeighting::None => "none",
            SampleWeighting::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: BoostParams,
    pub sample_weight: SampleWeighting,
}

/// Value sets per hyperparameter; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostGrid {
    pub max_depth: Vec<usize>,
    pub min_child_weight: Vec<f64>,
    pub gamma: Vec<f64>,
    pub subsample: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
    pub learning_rate: Vec<f64>,
    #[serde(alias = "n_round")]
    pub n_rounds: Vec<usize>,
    pub lambda: Vec<f64>,
    pub sample_weight: Vec<SampleWeighting>,
    pub seed: u64,
}

impl Default for BoostGrid {
    fn default() -> Self {
        Self::single(&BoostParams::default())
    }
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + step * i as f64) * 1e6).round() / 1e6).collect()
}

impl BoostGrid {
    pub fn single(p: &BoostParams) -> Self {
        Self {
            max_depth: vec![p.max_depth],
            min_child_weight: vec![p.min_child_weight],
            gamma: vec![p.gamma],
            subsample: vec![p.subsample],
            colsample_bytree: vec![p.colsample_bytree],
            learning_rate: vec![p.learning_rate],
            n_rounds: vec![p.n_rounds],
            lambda: vec![p.lambda],
            sample_weight: vec![SampleWeighting::None],
            seed: p.seed,
        }
    }

    /// Search space used for the single-modality tabular classifiers.
    pub fn tabular_reference() -> Self {
        Self {
            max_depth: vec![2, 4, 6, 8],
            min_child_weight: vec![1.0, 2.0, 3.0, 4.0],
            gamma: steps(0.0, 0.4, 0.2),
            subsample: steps(0.6, 1.0, 0.2),
            colsample_bytree: steps(0.6, 1.0, 0.2),
            learning_rate: steps(0.1, 0.3, 0.1),
            n_rounds: vec![100, 500],
            lambda: vec![1.0],
            sample_weight: vec![SampleWeighting::None, SampleWeighting::Balanced],
            seed: 0,
        }
    }

    /// Narrower search space for the fusion classifier, which trains on fewer rows.
    pub fn fusion_reference() -> Self {
        Self {
            max_depth: vec![2, 4, 6],
            min_child_weight: vec![1.0, 2.0],
            learning_rate: steps(0.1, 0.2, 0.1),
            n_rounds: vec![100, 200, 300],
            ..Self::tabular_reference()
        }
    }

    pub fn len(&self) -> usize {
        self.max_depth.len()
            * self.min_child_weight.len()
            * self.gamma.len()
            * self.subsample.len()
            * self.colsample_bytree.len()
            * self.learning_rate.len()
            * self.n_rounds.len()
            * self.lambda.len()
            * self.sample_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point in a fixed order; fails on an empty grid or invalid values.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        if self.is_empty() {
            return Err(Error::config("hyperparameter grid is empty"));
        }
        let mut out = Vec::with_capacity(self.len());
        for &n_rounds in &self.n_rounds {
            for &max_depth in &self.max_depth {
                for &learning_rate in &self.learning_rate {
                    for &min_child_weight in &self.min_child_weight {
                        for &gamma in &self.gamma {
                            for &subsample in &self.subsample {
                                for &colsample_bytree in &self.colsample_bytree {
                                    for &lambda in &self.lambda {
                                        for &sample_weight in &self.sample_weight {
                                            let params = BoostParams {
                                                max_depth,
                                                min_child_weight,
                                                gamma,
                                                subsample,
                                                colsample_bytree,
                                                learning_rate,
                                                n_rounds,
                                                lambda,
                                                seed: self.seed,
                                            };
                                            params.validate()?;
                                            out.push(GridPoint { params, sample_weight });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("invalid grid specification: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read grid {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Score of one evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Position in [`BoostGrid::points`] order.
    pub index: usize,
    pub point: GridPoint,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Highest macro-F1; ties go to fewer rounds, then lower depth, then grid order.
pub fn select_best(results: &[GridResult]) -> Option<&GridResult> {
    results.iter().min_by(|a, b| {
        b.macro_f1
            .total_cmp(&a.macro_f1)
            .then(a.point.params.n_rounds.cmp(&b.point.params.n_rounds))
            .then(a.point.params.max_depth.cmp(&b.point.params.max_depth))
            .then(a.index.cmp(&b.index))
    })
}

/// Results table sorted by descending macro-F1 (selection order among ties).
pub fn results_csv(results: &[GridResult]) -> String {
    let mut sorted: Vec<&GridResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        b.macro_f1
            .total_cmp(&a.macro_f1)
            .then(a.point.params.n_rounds.cmp(&b.point.params.n_rounds))
            .then(a.point.params.max_depth.cmp(&b.point.params.max_depth))
            .then(a.index.cmp(&b.index))
    });
    let mut s = String::from(
        "rank,grid_index,max_depth,min_child_weight,gamma,subsample,colsample_bytree,learning_rate,n_rounds,lambda,sample_weight,macro_f1,accuracy\n",
    );
    for (rank, r) in sorted.iter().enumerate() {
        let p = &r.point.params;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6}\n",
            rank + 1,
            r.index,
            p.max_depth,
            p.min_child_weight,
            p.gamma,
            p.subsample,
            p.colsample_bytree,
            p.learning_rate,
            p.n_rounds,
            p.lambda,
            r.point.sample_weight.as_str(),
            r.macro_f1,
            r.accuracy
        ));
    }
    s
}
