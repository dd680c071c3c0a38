//! Rank candidate model-system cell populations by distance to a target
//! population, stress-test the distance metrics under gene subsampling,
//! predict unseen perturbation combinations with a compositional
//! autoencoder, and recommend the next experiments via constrained
//! k-medoids.
//!
//! Start with the `examples/` directory for runnable walkthroughs of each
//! capability, or the `modelmatch` binary for the file-driven pipeline.

pub mod config;
pub mod distance;
pub mod error;
pub mod expr;
pub mod io;
pub mod perturb;
pub mod pipeline;
pub mod ranking;
pub mod recommend;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
