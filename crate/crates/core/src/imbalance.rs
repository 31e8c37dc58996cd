//! Class-imbalance strategies: balanced class weights, uniform class sampling and
//! proportional task sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `N / (C * N_c)` for every class `c`, with `N` the total and `C` the class count.
pub fn balanced_class_weights<T: Scalar>(counts: &[usize]) -> Result<Vec<T>> {
    if let Some(index) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass { index });
    }
    let total = T::of(counts.iter().sum::<usize>() as f64);
    let classes = T::of(counts.len() as f64);
    Ok(counts.iter().map(|&n| total / (classes * T::of(n as f64))).collect())
}

/// Per-task class weights, index-aligned with the schema vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<T> {
    pub per_task: Vec<Vec<T>>,
}

impl<T: Scalar> ClassWeights<T> {
    /// Balanced weights computed independently for each task.
    pub fn balanced(counts_per_task: &[Vec<usize>]) -> Result<Self> {
        let per_task = counts_per_task.iter().map(|c| balanced_class_weights(c)).collect::<Result<_>>()?;
        Ok(Self { per_task })
    }

    /// Counts labels per task and class, then builds balanced weights.
    pub fn balanced_from_labels(labels: &[Vec<Option<usize>>], n_classes: &[usize]) -> Result<Self> {
        let mut counts: Vec<Vec<usize>> = n_classes.iter().map(|&k| vec![0; k]).collect();
        for sample in labels {
            for (t, l) in sample.iter().enumerate() {
                if let Some(c) = l {
                    counts[t][*c] += 1;
                }
            }
        }
        Self::balanced(&counts)
    }

    pub fn weight(&self, task: usize, class: usize) -> T {
        self.per_task[task][class]
    }

    /// Scales every weight by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self { per_task: self.per_task.iter().map(|w| w.iter().map(|&x| x * factor).collect()).collect() }
    }
}

/// Balanced per-sample weights for a single-task learner such as the tree booster.
/// Classes absent from `labels` are left out of the class count.
pub fn sample_weights<T: Scalar>(labels: &[usize], n_classes: usize) -> Vec<T> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = counts.iter().copied().filter(|&n| n > 0).collect();
    let w = balanced_class_weights::<T>(&present).unwrap_or_default();
    let mut per_class = vec![T::zero(); n_classes];
    let mut next = w.into_iter();
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            per_class[c] = next.next().expect("one weight per present class");
        }
    }
    labels.iter().map(|&l| per_class[l]).collect()
}

/// How the training loss or booster treats class frequencies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceStrategy {
    #[default]
    None,
    WeightRescale,
    UniformSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Task drawn proportionally to its labeled-sample count, samples uniform within the task.
    ProportionalTask,
    /// Task drawn uniformly, then class uniformly, then sample uniformly within the class.
    UniformClassAndTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerPolicy {
    pub kind: SamplerKind,
    pub seed: u64,
}

/// Sample ids grouped by task and class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleIndex {
    by_class: Vec<Vec<Vec<usize>>>,
    by_task: Vec<Vec<usize>>,
}

impl SampleIndex {
    pub fn build(labels: &[Vec<Option<usize>>], n_classes: &[usize]) -> Self {
        let mut by_class: Vec<Vec<Vec<usize>>> = n_classes.iter().map(|&k| vec![Vec::new(); k]).collect();
        let mut by_task = vec![Vec::new(); n_classes.len()];
        for (id, sample) in labels.iter().enumerate() {
            for (t, l) in sample.iter().enumerate() {
                if let Some(c) = l {
                    by_class[t][*c].push(id);
                    by_task[t].push(id);
                }
            }
        }
        Self { by_class, by_task }
    }

    pub fn n_tasks(&self) -> usize {
        self.by_task.len()
    }

    pub fn task_size(&self, task: usize) -> usize {
        self.by_task[task].len()
    }

    pub fn class_pool(&self, task: usize, class: usize) -> &[usize] {
        &self.by_class[task][class]
    }

    pub fn total_labeled(&self) -> usize {
        self.by_task.iter().map(Vec::len).sum()
    }
}

/// Seeded batch stream following a [`SamplerPolicy`].
#[derive(Debug, Clone)]
pub struct BatchSampler {
    policy: SamplerPolicy,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(policy: SamplerPolicy) -> Self {
        Self { policy, rng: ChaCha8Rng::seed_from_u64(policy.seed) }
    }

    pub fn policy(&self) -> SamplerPolicy {
        self.policy
    }

    /// Draws one task and a batch of sample ids labeled for it.
    pub fn next_batch(&mut self, index: &SampleIndex, batch_size: usize) -> Result<(usize, Vec<usize>)> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let live: Vec<usize> = (0..index.n_tasks()).filter(|&t| index.task_size(t) > 0).collect();
        if live.is_empty() {
            return Err(Error::config("sample index has no labeled samples"));
        }
        match self.policy.kind {
            SamplerKind::ProportionalTask => {
                let task = if live.len() == 1 {
                    live[0]
                } else {
                    let w = WeightedIndex::new(live.iter().map(|&t| index.task_size(t))).expect("positive weights");
                    live[w.sample(&mut self.rng)]
                };
                let pool = &index.by_task[task];
                let batch = if pool.len() >= batch_size {
                    rand::seq::index::sample(&mut self.rng, pool.len(), batch_size).into_iter().map(|i| pool[i]).collect()
                } else {
                    (0..batch_size).map(|_| pool[self.rng.random_range(0..pool.len())]).collect()
                };
                Ok((task, batch))
            }
            SamplerKind::UniformClassAndTask => {
                let task = live[self.rng.random_range(0..live.len())];
                let classes: Vec<&Vec<usize>> = index.by_class[task].iter().filter(|p| !p.is_empty()).collect();
                let batch = (0..batch_size)
                    .map(|_| {
                        let pool = classes[self.rng.random_range(0..classes.len())];
                        pool[self.rng.random_range(0..pool.len())]
                    })
                    .collect();
                Ok((task, batch))
            }
        }
    }
}

/// Free-function form of [`BatchSampler::next_batch`].
pub fn next_batch(sampler: &mut BatchSampler, index: &SampleIndex, batch_size: usize) -> Result<(usize, Vec<usize>)> {
    sampler.next_batch(index, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_weights() {
        let w = balanced_class_weights::<f64>(&[75, 25]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(w[1], 2.0);
        assert_eq!(balanced_class_weights::<f64>(&[10, 10, 10]).unwrap(), vec![1.0; 3]);
        let w32 = balanced_class_weights::<f32>(&[75, 25]).unwrap();
        assert_eq!(w32[1], 2.0);
    }

    #[test]
    fn zero_count_is_degenerate() {
        assert!(matches!(balanced_class_weights::<f64>(&[3, 0, 2]), Err(Error::DegenerateClass { index: 1 })));
    }

    #[test]
    fn sample_weights_follow_labels() {
        let w = sample_weights::<f64>(&[0, 0, 0, 1], 2);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(w[3], 2.0);
        let w = sample_weights::<f64>(&[2, 2, 0], 4);
        assert!((w[0] - 0.75).abs() < 1e-15);
        assert_eq!(w[2], 1.5);
    }

    fn labels(counts: &[usize]) -> Vec<Vec<Option<usize>>> {
        counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(vec![Some(c)], n)).collect()
    }

    #[test]
    fn single_task_is_always_selected() {
        let idx = SampleIndex::build(&labels(&[5, 3]), &[2]);
        let mut s = BatchSampler::new(SamplerPolicy { kind: SamplerKind::ProportionalTask, seed: 1 });
        for _ in 0..20 {
            assert_eq!(s.next_batch(&idx, 4).unwrap().0, 0);
        }
    }

    #[test]
    fn zero_batch_size_rejected() {
        let idx = SampleIndex::build(&labels(&[5, 3]), &[2]);
        let mut s = BatchSampler::new(SamplerPolicy { kind: SamplerKind::UniformClassAndTask, seed: 1 });
        assert!(matches!(s.next_batch(&idx, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_stream() {
        let idx = SampleIndex::build(&labels(&[50, 7, 20]), &[3]);
        for kind in [SamplerKind::ProportionalTask, SamplerKind::UniformClassAndTask] {
            let mut a = BatchSampler::new(SamplerPolicy { kind, seed: 42 });
            let mut b = BatchSampler::new(SamplerPolicy { kind, seed: 42 });
            for _ in 0..10 {
                assert_eq!(a.next_batch(&idx, 8).unwrap(), b.next_batch(&idx, 8).unwrap());
            }
        }
    }
}
