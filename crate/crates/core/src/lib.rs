//! Hierarchical dialogue sequence labeler with hierarchical knowledge
//! distillation.
//!
//! A Transformer utterance encoder pools each utterance into a vector, a
//! unidirectional LSTM runs over those vectors and a softmax head labels
//! every utterance online. A small student can be trained against a frozen
//! teacher with four losses: hard targets, temperature-softened teacher
//! outputs, and squared distances to the teacher's utterance vectors and
//! top-layer dialogue states.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod trainer;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use error::{HkdError, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{ForwardTrace, Labeler, ModelConfig};
pub use optim::{RAdam, RAdamConfig};
pub use report::{AblationReport, RunReport};
pub use trainer::{Precision, TrainConfig, Variant};
