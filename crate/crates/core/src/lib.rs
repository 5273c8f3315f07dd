//! Fairness-constrained learning to rank with stochastic Plackett-Luce policies.

pub mod baselines;
pub mod data;
pub mod error;
pub mod fairness;
pub mod metrics;
pub mod policy;
mod simplex;
pub mod trainer;

pub use error::{Error, Result};
