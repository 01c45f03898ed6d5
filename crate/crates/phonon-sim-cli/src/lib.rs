//! Library surface of the CLI crate: config parsing, emitters, ingestion.
//! The binary in `main.rs` wires these to subcommands.

pub mod config;
pub mod emit;
pub mod ingest;
