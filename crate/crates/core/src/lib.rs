//! Knowledge-guided denoising for implicit-feedback recommendation.
//!
//! The pipeline learns a soft edge mask over the training interaction graph
//! with a three-part information-bottleneck objective: a BPR ranking term on
//! the masked graph, contrastive alignment with LLM-derived preference
//! embeddings and with an LLM-enriched graph view, and an HSIC compression
//! term between the original and masked graph representations.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod llm;
pub mod model;
pub mod objective;
pub mod preference;
pub mod prompts;
pub mod relation;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
