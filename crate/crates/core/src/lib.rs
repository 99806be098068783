//! Conditional variational autoencoders whose latent code is censored against
//! a nuisance label, either adversarially or by up-weighting the KL term.
//!
//! Everything is implemented on a small dense `f64` tensor with hand-written
//! backward passes; [`gradcheck`] verifies them numerically.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod mnist;
pub mod models;
pub mod rng;
pub mod stochastic;
pub mod tensor;
pub mod training;

pub use error::{Error, IdxError, Result};
pub use eval::{EvalReport, ImageGrid, MetricsRecord, SweepRow};
pub use layers::{AdamConfig, LinearLayer};
pub use mnist::{Batch, Dataset, Split};
pub use models::{Censor, CensoredVae, ConditioningMode, ModelConfig};
pub use rng::{SeedTree, Stream, StreamRng};
pub use tensor::Tensor;
pub use training::{StepReport, TrainingConfig};
