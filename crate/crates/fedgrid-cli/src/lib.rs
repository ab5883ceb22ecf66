//! Library side of the `fedgrid` binary: configuration loading, experiment
//! assembly, checkpoint persistence, CSV/plot export and the subcommand
//! implementations. Kept as a library so integration and acceptance tests
//! can drive the same code paths the binary uses.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod plot;

/// Round-trip float formatting for CSV output: shortest representation
/// that parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
