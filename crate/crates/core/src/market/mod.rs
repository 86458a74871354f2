//! Market sessions: gains, bid-gain tables, pricing and settlement.

mod bgt;
mod lrm;
mod report;
mod session;
mod value;

use std::collections::BTreeMap;

pub use bgt::{set_price, BgtRow, BidGainTable, BidGrid, PriceDecision};
pub use lrm::{lrm_benchmark, LrmColumn, LrmOutcome};
pub use report::{
    write_bid_gain_csv, write_cumulative_gain_csv, write_forecasts_csv, write_reports_json, write_revenues_csv,
    write_summary_csv, DeliveredForecast, HorizonSettlement, SellerRevenue, SettlementReport,
};
pub use session::{
    looks_stationary, run_rolling, run_session, BuyerConfig, BuyerTask, FittedBuyer, GainEstimator, HyperparameterPolicy,
    RollingPlan, SellerConfig, SessionConfig, SolverSettings, Stationarity,
};
pub use value::ValueFunction;

use crate::error::{MarketError, Result};
use crate::money::Money;
use crate::solver::CoefficientSet;

/// Percentage improvement of `market_loss` over `local_loss`, floored at 0.
pub fn gain(local_loss: f64, market_loss: f64) -> Result<f64> {
    if !(local_loss > 0.0) || !local_loss.is_finite() {
        return Err(MarketError::Domain(format!("local loss must be positive, got {local_loss}")));
    }
    if !market_loss.is_finite() {
        return Err(MarketError::Domain(format!("market loss must be finite, got {market_loss}")));
    }
    Ok(100.0 * (local_loss - market_loss).max(0.0) / local_loss)
}

/// Revenue per owner: the posted price of every group with a nonzero
/// coefficient. Owners whose groups are all unused appear with zero.
pub fn revenues(coefficients: &CoefficientSet) -> BTreeMap<u32, Money> {
    let mut out = BTreeMap::new();
    for (g, info) in coefficients.groups.iter().enumerate() {
        let r = out.entry(info.owner).or_insert(Money::ZERO);
        if coefficients.group_used(g) {
            *r += info.price;
        }
    }
    out
}
