//! Cascaded latent diffusion over the levels of a latent hierarchy.

pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod toy;
pub mod train;

pub use denoiser::{denoising_loss, Denoiser, DenoiserConfig};
pub use sampler::{heun_sample, level_seed, sample_cascade};
pub use schedule::{add_noise, loss_weight, NoiseScheduleEDM, Preconditioning, SigmaSampler};
pub use toy::{ModeRecovery, TwoModeToy};
pub use train::{train_cascade, DiffusionTrainConfig, LatentRecord, StageTrainer, TrainedStage};
