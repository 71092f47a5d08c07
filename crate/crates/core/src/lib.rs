//! Zero-shot classification with sampled class descriptions.
//!
//! Classes are represented by sets of natural-language or structured
//! descriptions. Each minibatch draws one description per class, encodes it
//! into the output matrix, and scores inputs against it with a bi-encoder
//! dot product, optionally plus contextualized exact-token matches.

pub mod ablation;
pub mod config;
pub mod data;
pub mod dataset;
pub mod descstore;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod jsongen;
pub mod labels;
pub mod model;
pub mod params;
pub mod rng;
pub mod scoring;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
