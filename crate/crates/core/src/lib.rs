//! Generative long-term user interest modeling for click-through-rate
//! prediction.
//!
//! A short window of recent behaviors generates three target-independent
//! distributions over a hashed item space. Every long-term behavior is scored
//! by a constant-time lookup into each distribution, the top-k per
//! distribution are aggregated against the target with multi-head attention,
//! and a learned gate fuses the three interest embeddings into the long-term
//! feature fed to the CTR head.

pub mod baselines;
pub mod brm;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evalbench;
pub mod gradcheck;
pub mod ifm;
pub mod igm;
pub mod model;
pub mod nn;
pub mod trainer;

pub use error::{GenliError, Result};
