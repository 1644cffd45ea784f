//! Multimodal wound classification engine.
//!
//! Image branch: a Vision Transformer whose patch tokens can be augmented
//! with co-located 2-D wavelet coefficients. Location branch: a 9-bit binary
//! body-map code read by a small transformer encoder. The two latents are
//! concatenated and classified. Around the model sit confusion-matrix
//! metrics, analytic complexity accounting, dataset handling, and three
//! swarm metaheuristics (IGWO, FOX, mGTO) for hyperparameter search.

pub mod data;
pub mod error;
pub mod evalx;
pub mod exec;
pub mod fusion;
pub mod swarm;
pub mod numerics;
pub mod location;
pub mod transformer;
pub mod vision;
pub mod wavelet;

pub use error::{Error, Result};
pub use exec::Execution;
