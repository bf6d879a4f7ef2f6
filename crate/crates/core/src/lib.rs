//! Desk-scale toolkit for modelling dynamical systems from their signals.
//!
//! The pipeline runs bottom-up:
//!
//! * [`dynsys`] integrates the Lorenz system (optionally with a switching
//!   parameter schedule) and produces noisy scalar observations.
//! * [`embedding`] reconstructs an attractor from one observable by
//!   delay-coordinate embedding, with lag and dimension estimators.
//! * [`forecast`] learns the flow field as a library of transitions and
//!   predicts successors, including multi-modal predictions, correction
//!   vectors and regime tracking.
//! * [`causality`] measures coupling with the rank-based L-index and
//!   convergent cross mapping.
//! * [`sdr`] encodes scalars as sparse distributed representations and runs a
//!   transition memory plus temporal pooler that emit anomaly scores.
//!
//! Batch loops (neighbour queries, per-anchor rank tables, cross-map passes)
//! run on rayon when the `parallel` feature is enabled; see [`Exec`].

pub mod causality;
pub mod dynsys;
pub mod embedding;
mod error;
mod exec;
pub mod forecast;
pub mod io;
pub mod knn;
pub mod sdr;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
