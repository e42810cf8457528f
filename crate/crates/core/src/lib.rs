//! Few-shot classification from multiple noisy annotators.
//!
//! A shared encoder embeds examples into a latent space where a Gaussian
//! mixture coupled with per-annotator confusion matrices is fitted to each
//! task by a few closed-form EM steps. The encoder is meta-trained by
//! backpropagating a query log-likelihood through the unrolled EM, with
//! support labels produced by simulated pseudo-annotators.

pub mod annotators;
pub mod baselines;
pub mod data;
pub mod em;
pub mod encoder;
pub mod error;
pub mod math;
pub mod meta;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
