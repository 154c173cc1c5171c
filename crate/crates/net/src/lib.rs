//! A two-pathway convolutional network that maps a channel matrix to a
//! modulation/demodulation pair, trained with hand-written backpropagation.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use model::{init_params, ArchConfig, Mode, NetDims, NetworkOutput, NetworkParams};
pub use train::{finalize_modem, train_stage1, train_stage2, History, TrainingPlan};
