//! Instruction-conditioned text embeddings built by answering.
//!
//! A generative LM is prompted with an instruction and an input text; the
//! embedding is pooled from its hidden states while it answers, or from a
//! second embedder applied to the sampled answers. The crate also carries
//! the evaluation suite (triplets, pair similarity, multi-view clustering,
//! instruction robustness), K-means clustering with TF-IDF interpretation,
//! and training-data preparation.

pub mod backend;
pub mod benchmarks;
pub mod cli;
pub mod clustering;
pub mod dataprep;
pub mod embfile;
pub mod encoding;
pub mod error;
pub mod interpretation;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod service;

pub use error::{Error, Result};
pub use math::Embedding;
