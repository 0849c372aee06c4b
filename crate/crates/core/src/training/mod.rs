//! Autoencoder optimization: occupancy loss, optimizer, training loop and
//! gradient verification.

pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use gradcheck::{check_gradients, gradient_check, GradCheckReport};
pub use loss::{bce_occupancy_loss, occupancy_loss_node, LossBreakdown, NEAR_WEIGHT};
pub use optim::{AdamW, OptimConfig};
pub use trainer::{encoder_input, AutoencoderTrainer, TrainConfig, TrainedAutoencoder};
