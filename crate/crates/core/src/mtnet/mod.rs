//! Multitask neural head over precomputed embeddings.

mod adam;
pub mod checkpoint;
mod loss;
mod model;
mod predict;
mod train;

pub use adam::{Adam, AdamConfig};
pub use loss::{backward, data_loss_sum, gradient, loss, loss_focal, loss_sce, Example, LossKind, Objective, DEFAULT_GAMMA};
pub use model::{
    ForwardCache, HeadTopology, HiddenCache, MultitaskHeadModel, ParamTensor, DEFAULT_DROPOUT, DEFAULT_TRUNK, IMAGE_INPUT_DIM,
    TEXT_INPUT_DIM,
};
pub use predict::{aggregate_embeddings, predict_record};
pub use train::{train, EpochLog, Sample, TrainConfig, TrainLog};
