//! Small feed-forward networks, Adam, ensembles and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod ensemble;
pub mod loss;
pub mod mlp;
pub mod train;

pub use adam::{Adam, AdamState, MlpAdam};
pub use ensemble::Ensemble;
pub use loss::{loss_and_grad, probs_to_logit_grad, weighted_loss};
pub use mlp::{Dense, ForwardCache, Mlp, MlpGrads};
pub use train::{train, EpochRecord, TrainOutcome};
