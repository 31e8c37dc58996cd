use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::RecordSet;
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, record_id: &str) -> Option<Split> {
        self.assignment.get(record_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment.iter().filter(move |(_, &s)| s == split).map(|(id, _)| id.as_str())
    }

    /// `record_id <TAB> split` lines sorted by id, after a seed comment.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# seed={}\n", self.seed);
        for (id, s) in &self.assignment {
            out.push_str(id);
            out.push('\t');
            out.push_str(s.as_str());
            out.push('\n');
        }
        out
    }
}

/// Uniformly random record-level partition, deterministic for a given seed.
///
/// Records are ordered by id before the seeded shuffle so the result does not
/// depend on input order.
pub fn split_records(records: &RecordSet, seed: u64, ratios: [f64; 3]) -> Result<SplitAssignment> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::config(format!("split ratios must be in [0,1] and sum to 1, got {ratios:?}")));
    }
    let mut ids: Vec<&str> = records.records.iter().map(|r| r.record_id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);

    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment { seed, assignment })
}
