//! Prototypical-network few-shot classification over fixed embedding spaces.
//!
//! The crate bundles four things that are usually scattered across notebooks:
//!
//! - an episodic N-way k-shot harness around the nearest-prototype classifier
//!   ([`protonet`]),
//! - post-hoc linear embedding transforms, the embedding space transformation
//!   (EST) and a PCA baseline ([`transforms`]),
//! - closed-form accuracy lower bounds and their Monte Carlo oracles
//!   ([`theory`]),
//! - a Gaussian generative world in which those closed forms hold exactly
//!   ([`world`]), plus CSV ingestion and variance diagnostics for real
//!   embeddings ([`datastore`]).
//!
//! All randomness flows through [`rng::SeedStream`], a counter-based stream
//! tree, so every result is a pure function of its seed regardless of how
//! many threads evaluate it.

pub mod datastore;
pub mod error;
pub mod numerics;
pub mod protonet;
pub mod rng;
pub mod theory;
pub mod transforms;
pub mod world;

pub use error::{Error, Result};
