//! Tensors, the MLP denoiser with reverse- and forward-mode derivatives,
//! checkpoints, and counter-based Gaussian noise.

pub mod checkpoint;
pub mod dual;
pub mod mlp;
pub mod rng;
mod tensor;

pub use dual::{Dual, Scalar};
pub use mlp::{
    batch_loss_gradient, loss_gradient, loss_gradient_f64, predict_noise, predict_noise_dual, Architecture,
    DenoiserParams, Gradients,
};
pub use rng::{derive_seed, gaussian, RngStream};
pub use tensor::Tensor;
