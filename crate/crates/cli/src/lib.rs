//! Library surface of the command-line front end: CSV ingestion, block
//! assignment, and the whitening preprocessor. The binary in `main.rs`
//! wires these into subcommands.

pub mod data;
