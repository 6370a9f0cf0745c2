//! Unsupervised dependency grammar induction with a neural variational
//! transition-based parser.
//!
//! The library pairs a discriminative arc-standard encoder (the runtime
//! parser) with a generative decoder that rescores sentences from latent
//! action sequences. Training runs variational EM with REINFORCE gradients,
//! posterior regularization from universal head->dependent POS rules, and a
//! family of variance-reduced score functions.

pub mod compose;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod pr;
pub mod transition;

pub use config::ModelConfig;
pub use error::{Error, Result};
