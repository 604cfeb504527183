//! Compressive video sensing: block random-projection encoding and
//! dictionary-learning split-Bregman recovery.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN, on purpose

pub mod container;
pub mod dictionary;
pub mod error;
pub mod keyframe;
pub mod learn;
mod linalg;
pub mod metrics;
pub mod nonkey;
pub mod omp;
pub mod patch;
pub mod pipeline;
pub mod sensing;
pub mod solver;
pub mod synthetic;
pub mod video;

pub use error::{CvsError, Result};
