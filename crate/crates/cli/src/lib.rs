//! File formats, configuration, metrics and the command implementations of
//! the `spkadapt` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod experiment;
pub mod gradsuite;
pub mod metrics;
pub mod parallel;
pub mod tensorfile;

// training allocates a fresh buffer for nearly every tape node
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
