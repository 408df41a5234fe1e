//! Checkpoint merging toolkit: read/write single-file tensor archives, merge
//! them with linear, spherical, sign-consensus or drop-and-rescale methods,
//! drive depth-dependent blend schedules and coefficient sweeps, and compute
//! safety/general metrics from external judgments.

pub mod cli;
pub mod error;
pub mod evalmetrics;
pub mod mergecore;
pub mod oracle;
pub mod recipe;
pub mod schedule;
pub mod search;
pub mod tensorio;

pub use error::{Error, Result};
