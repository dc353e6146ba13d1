//! IO, synthetic data, reporting, the routing service and the CLI built on
//! top of `route-lmt-core`.

pub mod cli;
pub mod error;
pub mod ingest;
pub mod report;
pub mod service;
pub mod synth;

pub use error::{Error, Result};
pub use route_lmt_core as core;
