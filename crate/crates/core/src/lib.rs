//! Frozen-pretrained-transformer forecasting of daily ETH prices.

pub mod autograd;
pub mod backbone;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod normpatch;
pub mod params;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
