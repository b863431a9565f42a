//! Autoregressive, masked-diffusion and blockwise sequence generation on a
//! shared transformer backbone, with the training, decoding and evaluation
//! machinery used to compare them.

pub mod backbone;
pub mod corruption;
pub mod error;
pub mod exec;
pub mod harness;
pub mod maskgen;
pub mod objectives;
pub mod paradigm;
pub mod rng;
pub mod samplers;
pub mod tasks;
pub mod seqcore;

pub use error::{Error, Result};
pub use paradigm::Paradigm;
