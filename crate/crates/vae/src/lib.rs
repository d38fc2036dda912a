//! A small multilayer-perceptron VAE trained on `recon + λ · D(q(z|x), N(0, I))`
//! with `D` any of the closed-form diagonal regularisers from `gjs-core` (KL in
//! either direction, JS^Gα, its dual) or an MMD penalty on latent samples.
//!
//! Everything runs on one thread with `f64` arithmetic, so a fixed seed gives a
//! bit-identical [`TrainRecord`].

pub mod data;
mod error;
pub mod evidence;
pub mod model;
pub mod train;
pub mod traversal;

pub use error::{Error, Result};
pub use model::{
    grad_check, init, loss, loss_and_grad, reparam_sample, Activation, DecoderOutput, Gradients, LossParts, Posterior,
    VaeArch, VaeModel,
};
pub use train::{train, EvalMode, TrainConfig, TrainRecord};
