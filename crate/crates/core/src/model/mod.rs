//! The multi-task autoencoder, its fully-connected baseline, and their
//! losses.
//!
//! A [`Network`] pairs an [`Architecture`] with a [`ModelWeights`] store.
//! The forward pass is recorded on a [`Graph`](crate::tensor::Graph) so the
//! same code serves training and inference.

pub mod arch;
pub mod loss;
pub mod network;
pub mod weights;

pub use arch::{Architecture, ArchitectureSpec, Layer, ParamSlot, ShapeRow, SslcSpec, LATENT_DIM};
pub use loss::{
    batch_loss, masked_mse, total_loss, weighted_bce, BatchTargets, BceForm, LossTerms, Objective, BCE_EPSILON,
    BETA_GRID, DECISION_THRESHOLD, DEFAULT_BETA,
};
pub use network::{batch_tensor, Forward, ForwardOptions, Network, TrainableScope, EVAL_BATCH};
pub use weights::{ModelWeights, WeightEntry, WEIGHTS_FORMAT_VERSION};
