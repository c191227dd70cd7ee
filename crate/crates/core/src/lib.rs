//! Prompt-driven speaker embedding generation.
//!
//! Listener-impression answers become slot-filled prompts, prompts become
//! conditioning vectors through a frozen encoder with a low-rank adapter,
//! and conditioning vectors become speaker embeddings through either a
//! deterministic projection head or a conditional flow-matching generator.
//! The [`metrics`] module holds the evaluation suite and [`synthdata`] a
//! synthetic world with closed-form conditionals to evaluate against.

pub mod config;
pub mod discriminative;
pub mod embedding;
pub mod error;
pub mod flow;
pub mod io;
pub mod mathcore;
pub mod metrics;
pub mod prompt;
pub mod rng;
pub mod synthdata;
pub mod system;

pub use embedding::{Provenance, SpeakerEmbedding};
pub use error::{Error, Result};
