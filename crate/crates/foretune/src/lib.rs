//! Hyperparameter tuning for desk-scale time-series forecasters.
//!
//! The pipeline: define a discrete search space over value ladders
//! ([`hyperspace`]), draw configurations with a searcher ([`searchers`]),
//! train small forecasting models under a memory budget and score them
//! ([`data`], [`model`], [`train`]), run whole experiments deterministically
//! ([`scheduler`]) against an append-only on-disk store ([`store`]), and
//! summarize the results as tables and plots ([`analysis`]).

pub mod analysis;
pub mod data;
pub mod error;
pub mod exec;
pub mod hyperspace;
pub mod model;
pub mod scheduler;
pub mod searchers;
pub mod store;
pub mod train;
pub mod seed;

pub use error::{Error, Result};
