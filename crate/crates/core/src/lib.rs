//! Budget-constrained collaborative forecasting market.
//!
//! Sellers post a price per feature, buyers submit value functions over
//! forecast-accuracy gain, and the market operator fits budget-constrained
//! spline LASSO models, prices forecasts from a bid-gain table and pays sellers
//! for the feature groups the chosen model uses.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod money;
pub mod solver;
pub mod tuning;
pub mod splines;
pub mod market;
pub mod benchmarks;

pub use error::{MarketError, Result};
pub use money::{Money, PriceScale};
