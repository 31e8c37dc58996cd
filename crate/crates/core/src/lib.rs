pub mod corpus;
pub mod decision;
pub mod error;
pub mod fsutil;
pub mod fusion;
pub mod gbdt;
pub mod grid;
pub mod imbalance;
pub mod metrics;
pub mod mtnet;
pub mod provexport;
pub mod scalar;
pub mod schema;
pub mod stamp;
pub mod synth;
pub mod tabular;

pub use decision::ModalityDecision;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schema::{Task, TaskSchema, NA};

/// Neural head in 64-bit precision, the default for training.
pub type HeadModel = mtnet::MultitaskHeadModel<f64>;
/// Neural head in 32-bit precision.
pub type HeadModelF32 = mtnet::MultitaskHeadModel<f32>;
/// Tree ensemble in 64-bit precision.
pub type Ensemble = gbdt::TreeEnsemble<f64>;
