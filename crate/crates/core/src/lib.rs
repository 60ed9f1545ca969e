//! Simulation and numerical verification of Mandelbrot cascades and
//! percolations on symbolic spaces, their images under affine IFSs, and the
//! dimensions of projections, convolutions and sumsets of those images.
//!
//! Module map:
//! - [`symbolic`]: words, subshifts, Bernoulli/Markov measures, entropies
//! - [`ifs`]: affine IFSs, canonical maps, overlap counts
//! - [`cascade`]: keyed randomness, weight laws, cascades, percolation
//! - [`euclid`]: atomic measures and interval sets on the line and plane
//! - [`dimension`]: box-counting and entropy-dimension estimators
//! - [`experiments`]: configured experiment runs and their reports

pub mod cascade;
pub mod dimension;
pub mod error;
pub mod euclid;
pub mod experiments;
pub mod ifs;
pub mod numeric;
pub mod par;
pub mod symbolic;

pub use error::{Error, Result};
