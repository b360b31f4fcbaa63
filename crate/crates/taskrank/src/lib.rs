//! Files, experiments and the command line for `taskrank-core`.
//!
//! * [`ingest`] turns arena-style vote logs (CSV or JSON lines) into
//!   comparison datasets.
//! * [`io`] reads and writes comparison files, score matrices and versioned
//!   JSON artifacts.
//! * [`config`] is the TOML run configuration shared by all subcommands.
//! * [`pipeline`] binds the estimators to inference maps.
//! * [`harness`] runs the Monte Carlo experiments.

pub mod config;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
pub use pipeline::{Estimator, Method};
