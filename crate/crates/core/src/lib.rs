//! Reconstruction of directed spiking-network topology from voltage traces.
//!
//! Stages: [`graph`] generates ground truth, [`sim`] produces membrane
//! potentials, [`events`] turns them into binary spike and event processes,
//! [`lasso`] and [`xcorr`] rank candidate edges, and [`eval`] scores rankings.

pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod graph;
pub mod lasso;
pub mod pipeline;
pub mod sim;
pub mod xcorr;

pub use error::{Error, Result};
