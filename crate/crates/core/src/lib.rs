//! Variational inference for clusterwise linear regression.
//!
//! The model assumes inputs fall into K Gaussian clusters, each with its own
//! regression vector mapping the input to the next output. Coordinate ascent
//! fits a mean-field variational posterior over the cluster means, regression
//! vectors, and per-observation assignments; the predictor turns a fitted
//! posterior into a full Gaussian-mixture forecast density. A synthetic-data
//! sampler and a rolling-window backtest harness support evaluation.

pub mod backtest;
pub mod cavi;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod generate;
pub mod math;
pub mod model;
pub mod parallel;
pub mod predict;

pub use error::{Error, Result};
pub use model::{Dataset, FitReport, Hyperparameters, PredictiveMixture, VariationalPosterior};
