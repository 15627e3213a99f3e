//! Unrolled Wirtinger-flow phase retrieval: forward models, classic WF,
//! a trainable encoder/RNN/decoder network, stability-theory tooling and
//! deterministic dataset and checkpoint containers.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod plot;
pub mod rng;
pub mod tape;
pub mod theory;
pub mod train;
pub mod unrolled;
pub mod wf;

pub use error::{Error, Result};
