//! Batch pipeline over the `mmfuse` library: ingest, per-modality training, late
//! fusion, evaluation and RDF export.

pub mod config;
pub mod stages;

use mmfuse::Error;

/// Process exit code for an error: 2 for configuration and usage problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dependency(_) | Error::UnknownTask(_) => 2,
        _ => 1,
    }
}
