//! File formats, persistence, CLI and HTTP API around [`stormwatch_core`].
//!
//! The data directory (`STORMWATCH_DATA_DIR`, default `./stormwatch-data`)
//! holds the signal store as CSV and one folder per campaign with a JSON
//! snapshot and an append-only JSONL event journal. [`registry::Registry`]
//! serializes every write through one lock and journals it before
//! returning, which is what both the CLI and the HTTP service build on.

pub mod api;
pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod model;
pub mod registry;
pub mod store;
pub mod synth;
pub mod trials;

pub use error::{Error, Result};
pub use stormwatch_core as core;
