// `!(x > 0.0)` in validation deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod latents;
pub mod params;
pub mod recon;
pub mod stats;
pub mod tensor;
pub mod training;
pub mod vecset;

pub use checkpoint::Checkpoint;
pub use error::{Error, ErrorClass, Result};
pub use latents::LatentSet;
pub use params::{ParamId, ParamStore};
pub use tensor::{Mat, Scalar};
