#![cfg_attr(not(any(feature = "std", test)), no_std)]

//! Detection of media storms in daily news coverage.
//!
//! The crate is `no_std` + `alloc`. It turns per-document embeddings into
//! daily dispersion signals, fits an additive trend/seasonality/holiday model
//! to each signal, flags days that fall outside the model's uncertainty band,
//! and clusters days on which most signals agree into storm candidates. A
//! random search over the forecaster's hyperparameters scores candidates
//! against a seed list of known storms, and the [`campaign`] module drives the
//! iterative expert-validation loop around it.
//!
//! Features:
//! - `std`: `std::error::Error` impls.
//! - `parallel`: evaluate search trials on the rayon thread pool.
//! - `serde`: `Serialize`/`Deserialize` for all domain types.

extern crate alloc;

pub mod campaign;
pub mod detect;
mod error;
pub mod forecast;
pub mod signal;
pub mod span;
pub mod stats;
pub mod tune;

pub use crate::error::{Error, Result};
pub use crate::signal::{DispersionSeries, SignalBundle, SignalKind};
pub use crate::span::DateSpan;

pub use chrono::NaiveDate;
