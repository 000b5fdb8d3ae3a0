//! Autoregressive rectified-flow forecasting of 2D fields with a patch-token
//! transformer, built to compare x-, v- and eps-prediction targets.

pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod fsio;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
