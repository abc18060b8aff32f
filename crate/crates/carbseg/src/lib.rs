//! File formats, directory-backed feature provider, CSV emitters and the
//! `carbseg` command-line tool built on [`carbseg_core`].

pub mod catalog;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod curves;
pub mod dtn1;
pub mod error;
pub mod labels;
pub mod manifest;
pub mod parallel;
pub mod provider;
pub mod stats_csv;
pub mod telemetry;

pub use error::{Error, Result};
