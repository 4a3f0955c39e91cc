//! Black-box k-to-1 PCA deflation.
//!
//! Given any routine that returns an approximate top eigenvector of `P M P`
//! restricted to `span(P)`, [`deflation::black_box_pca`] builds a k-column
//! frame by calling it k times and projecting each answer out. The crate
//! also provides the metrics used to judge such frames, concrete oracles,
//! explicit counterexample instances, and two statistical pipelines built
//! on the same driver: robust PCA under contamination and streaming PCA on
//! clipped heavy-tailed data.

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod oracles;
pub mod deflation;
pub mod adversarial;
pub mod robust;
pub mod online;
pub mod io;
pub mod harness;

pub use error::{Error, Result};
