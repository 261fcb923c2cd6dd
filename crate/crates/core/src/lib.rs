//! Latent-recovery auditing of small generative image models.
//!
//! The crate trains toy generators (GAN, GLO, autoencoder-GAN), inverts them
//! by optimizing over the latent space, and compares the resulting
//! reconstruction errors on training and held-out images to detect
//! memorization.

pub mod autodiff;
pub mod data;
pub mod distortions;
pub mod error;
pub mod models;
pub mod optim;
pub mod recovery;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use autodiff::{grad_check, Gradients, NodeId, Tape};
pub use error::{Error, Result};
pub use optim::{minimize, Minimized, OptimizerConfig, OptimizerKind};
pub use rng::Rng;
pub use tensor::{Rect, Tensor};
