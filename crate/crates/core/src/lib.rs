//! Evaluation and modeling toolkit for person-by-day longitudinal panels.

pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod panel;
pub mod runner;
pub mod splits;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
