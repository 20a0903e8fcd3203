//! Continuous-embedding flow-matching language modeling on synthetic corpora.
//!
//! The crate trains a small shared-weight denoise/decode transformer over
//! frozen Gaussian token embeddings with a rectified-flow objective,
//! training-time classifier-free guidance via self-conditioning, and ODE/SDE
//! samplers. Corpora are Markov chains with analytically known statistics, so
//! generative perplexity is scored by an exact oracle.
//!
//! Core numerics are generic over the scalar type ([`scalar::Scalar`]); the
//! aliases below pin the default double-precision instantiation used by the
//! trainer, checkpoints, and the CLI.

pub mod config;
pub mod corpus;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod evalsuite;
pub mod flow;
pub mod net;
pub mod sampler;
pub mod trainer;
pub mod numeric;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for training and evaluation.
pub type Real = f64;
/// Dense array over [`Real`].
pub type Arr = numeric::Array<Real>;
/// Gradient tape over [`Real`].
pub type RealTape = numeric::Tape<Real>;
