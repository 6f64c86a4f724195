//! Configuration, output formats and snapshot persistence.

pub mod config;
pub mod csv;
pub mod sink;
pub mod snapshot;
