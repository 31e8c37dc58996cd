use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{backward, data_loss_sum, Example, LossKind, Objective, DEFAULT_GAMMA};
use super::model::MultitaskHeadModel;
use crate::error::{Error, Result};
use crate::imbalance::{BatchSampler, ClassWeights, ImbalanceStrategy, SampleIndex, SamplerKind, SamplerPolicy};
use crate::scalar::Scalar;

/// One embedding with its record's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub labels: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub omega_r: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub sampler: SamplerKind,
    /// Multiply every loss term by the balanced weight of its true class.
    pub balanced_class_weights: bool,
    pub max_epochs: usize,
    pub patience: usize,
    /// Apply weight decay in the update step instead of through the loss.
    pub decoupled_decay: bool,
    /// Count every known label of a sampled example, not only the sampled task's.
    pub loss_on_all_known_tasks: bool,
    /// Optimizer steps per epoch; defaults to `ceil(n_train / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::image()
    }
}

impl TrainConfig {
    pub fn image() -> Self {
        Self {
            loss: LossKind::SoftmaxCe,
            omega_r: 1e-3,
            adam: AdamConfig { learning_rate: 1e-4, ..AdamConfig::default() },
            batch_size: 300,
            sampler: SamplerKind::ProportionalTask,
            balanced_class_weights: false,
            max_epochs: 20,
            patience: 3,
            decoupled_decay: false,
            loss_on_all_known_tasks: false,
            steps_per_epoch: None,
            seed: 0,
        }
    }

    pub fn text() -> Self {
        Self {
            adam: AdamConfig { learning_rate: 3e-5, ..AdamConfig::default() },
            omega_r: 0.0,
            batch_size: 64,
            decoupled_decay: true,
            ..Self::image()
        }
    }

    pub fn with_focal(mut self) -> Self {
        self.loss = LossKind::Focal { gamma: DEFAULT_GAMMA };
        self
    }

    /// Class weights or uniform class sampling; `None` restores proportional task sampling.
    pub fn with_imbalance(mut self, strategy: ImbalanceStrategy) -> Self {
        self.balanced_class_weights = strategy == ImbalanceStrategy::WeightRescale;
        self.sampler = match strategy {
            ImbalanceStrategy::UniformSampling => SamplerKind::UniformClassAndTask,
            _ => SamplerKind::ProportionalTask,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if !(self.adam.learning_rate > 0.0) || !(self.omega_r >= 0.0) {
            return Err(Error::config("learning rate must be > 0 and weight decay >= 0"));
        }
        if let LossKind::Focal { gamma } = self.loss {
            if !(gamma >= 0.0) {
                return Err(Error::config("focal gamma must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub task_counts: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

fn labels_of<T>(samples: &[Sample<T>]) -> Vec<Vec<Option<usize>>> {
    samples.iter().map(|s| s.labels.clone()).collect()
}

/// Adam training with task sampling and early stopping on the validation data loss.
/// Returns the parameter snapshot with the lowest validation loss.
pub fn train<T: Scalar>(
    mut model: MultitaskHeadModel<T>,
    train_set: &[Sample<T>],
    validation: &[Sample<T>],
    config: &TrainConfig,
) -> Result<(MultitaskHeadModel<T>, TrainLog)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let n_classes = model.topology().outputs.clone();
    let labels = labels_of(train_set);
    let index = SampleIndex::build(&labels, &n_classes);
    if index.total_labeled() == 0 {
        return Err(Error::config("training set has no labels"));
    }
    let weights = if config.balanced_class_weights {
        Some(ClassWeights::<T>::balanced_from_labels(&labels, &n_classes)?)
    } else {
        None
    };
    let decoupled = config.decoupled_decay;
    let omega = T::of(config.omega_r);
    let train_obj = Objective {
        kind: config.loss,
        omega_r: if decoupled { T::zero() } else { omega },
        class_weights: weights.as_ref(),
    };
    let val_obj = Objective { omega_r: T::zero(), ..train_obj.clone() };
    let val_examples: Vec<Example<'_, T>> = validation.iter().map(|s| Example::new(&s.x, s.labels.clone())).collect();

    let mut sampler = BatchSampler::new(SamplerPolicy { kind: config.sampler, seed: config.seed });
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(config.adam, model.n_params());
    let steps = config.steps_per_epoch.unwrap_or_else(|| train_set.len().div_ceil(config.batch_size)).max(1);

    let mut log = TrainLog { best_validation_loss: f64::INFINITY, ..TrainLog::default() };
    let mut best = model.clone();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let mut task_counts = vec![0; n_classes.len()];
        let mut train_loss = 0.0;
        for _ in 0..steps {
            let (task, ids) = sampler.next_batch(&index, config.batch_size)?;
            task_counts[task] += 1;
            let batch: Vec<Example<'_, T>> = ids
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    if config.loss_on_all_known_tasks {
                        Example::new(&s.x, s.labels.clone())
                    } else {
                        Example::restricted(&s.x, &s.labels, task)
                    }
                })
                .collect();
            let (l, grad) = backward(&model, &batch, &train_obj, Some(&mut dropout_rng))?;
            if !l.is_finite() {
                return Err(Error::Validation(format!("non-finite training loss at epoch {epoch}")));
            }
            train_loss += l.as_f64();
            adam.step(model.params_mut(), &grad, decoupled.then_some(omega));
        }
        let val = data_loss_sum(&model, &val_examples, &val_obj)?.as_f64();
        log::debug!("epoch {epoch}: train {train_loss:.6} validation {val:.6}");
        log.epochs.push(EpochLog { epoch, train_loss, validation_loss: val, task_counts });
        if val < log.best_validation_loss || log.best_epoch == 0 {
            log.best_validation_loss = val;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                log.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    Ok((best, log))
}
