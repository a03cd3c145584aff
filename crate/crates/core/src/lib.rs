//! Label-noise-robust training in two phases: grow a small trusted subset by
//! positive-unlabeled filtering of the noisy pool, then distill a teacher
//! ensemble trained on the grown subset into a student with case-wise
//! pseudo-labels.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
