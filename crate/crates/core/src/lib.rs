//! Online estimation of page change rates from change indicators, offline
//! baselines, a replicated-experiment harness, and a budgeted crawl-rate
//! allocator that can run an estimate-then-reallocate loop.

pub mod allocator;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod point_process;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
