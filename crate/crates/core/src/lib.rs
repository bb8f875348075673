//! Token-level attribute steering for block-wise masked-diffusion decoding.
//!
//! The pipeline has two halves:
//!
//! - **Offline**: count tokens in a class-labeled corpus ([`corpus`]), turn the
//!   counts into one-vs-rest log-odds scores smoothed by a pooled Dirichlet prior
//!   and normalized by their approximate standard deviation ([`scores`]).
//! - **Decode time**: clip and scale a class's scores into a fixed bias vector
//!   ([`steering`]) and add it to the vocabulary logits of every masked position
//!   at every step of a confidence-ordered block decoder ([`decoder`]).
//!
//! [`mockmodel`] provides an interpolated bigram logit provider so the whole loop
//! can run without a neural backbone, and [`provider`] speaks a JSON-lines
//! protocol to external providers. [`analysis`] computes score-table diagnostics
//! and the steering-efficacy experiment.

pub mod analysis;
pub mod contract;
pub mod corpus;
pub mod decoder;
mod error;
pub mod mockmodel;
pub mod provider;
pub mod scores;
pub mod steering;
pub mod tsv;

pub use error::{Error, Result};

/// Dense token identifier.
pub type TokenId = u32;
