//! Retrieval-augmented diffusion at desk scale.
//!
//! A small denoising diffusion model whose noise predictor attends, via
//! cross-attention, to the embeddings of nearest neighbors retrieved from an
//! external vector database. The database is part of the model but not of
//! its weights, so it can be replaced after training to steer the output
//! (for example towards a visual style) without retraining.
//!
//! Module map:
//! - [`numerics`]: tensors, reverse-mode autodiff, Adam, parameter files.
//! - [`embedding`]: the shared item/query embedding space.
//! - [`vectordb`]: databases, exact and IVF search, persistence.
//! - [`diffusion`]: noise schedule, forward process, loss, ancestral sampler.
//! - [`denoiser`]: the cross-attention noise-prediction network.
//! - [`pipeline`]: retrieval policy, training loop, database-swap sampling.
//! - [`evalkit`]: toy world, style classifier, stylization comparison.

mod binio;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod embedding;
pub mod denoiser;
pub mod diffusion;
pub mod numerics;
pub mod pipeline;
pub mod vectordb;

pub use error::{RdmError, Result};
pub use exec::Exec;
pub use binio::{write_atomic, write_dir_atomic};
