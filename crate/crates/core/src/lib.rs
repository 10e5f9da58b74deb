//! Sentiment classification of code-switched informal short text.
//!
//! The crate is built bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`params`], [`optim`], [`rng`]: dense tensors,
//!   a reverse-mode tape, Adam, and seeded random streams.
//! - [`nn`]: embedding lookup, 1-D convolution, LSTM, dense, dropout, batch
//!   normalization, masked pooling and additive attention.
//! - [`embeddings`]: vocabularies, random/pretrained/skip-gram embedding
//!   tables and a character n-gram hashing encoder for unseen tokens.
//! - [`data`]: TSV ingestion, preprocessing, stratified splits, batching.
//! - [`models`]: the multi-cascaded CNN/LSTM classifier (three learners with
//!   their own softmax heads feeding a discriminator) and baselines.
//! - [`train`]: the training loop, metrics, grid search and the experiment
//!   matrix.
//! - [`cli`]: the `mcm` command-line front end.
//!
//! See `examples/` for one runnable program per capability.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
