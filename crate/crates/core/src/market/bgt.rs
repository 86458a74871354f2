use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ValueFunction;
use crate::error::{MarketError, Result};

const MAX_GRID_POINTS: usize = 1_000_000;

/// Bid grid `b_min, b_min + δ_b, …, b_max`. Without `max` the grid ends at
/// the total price of everything the buyer could purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidGrid {
    #[serde(default)]
    pub min: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub max: Option<f64>,
}

fn default_step() -> f64 {
    1.0
}

impl Default for BidGrid {
    fn default() -> Self {
        BidGrid { min: 0.0, step: default_step(), max: None }
    }
}

impl BidGrid {
    pub fn bids(&self, total_price: f64) -> Result<Vec<f64>> {
        let max = self.max.unwrap_or(total_price);
        if !(self.min >= 0.0 && self.min.is_finite()) || !(self.step > 0.0 && self.step.is_finite()) {
            return Err(MarketError::Config(format!(
                "bid grid needs min >= 0 and step > 0, got min {} step {}",
                self.min, self.step
            )));
        }
        if !max.is_finite() || max < self.min {
            return Err(MarketError::Config(format!("bid grid is empty: max {max} below min {}", self.min)));
        }
        let n = ((max - self.min) / self.step + 1e-9).floor() as usize + 1;
        if n > MAX_GRID_POINTS {
            return Err(MarketError::Config(format!("bid grid has {n} points; increase the step")));
        }
        Ok((0..n).map(|i| self.min + self.step * i as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgtRow {
    pub bid: f64,
    /// Gain of the model fitted at exactly this budget.
    pub raw_gain: f64,
    /// Best gain among models affordable at this bid.
    pub gain: f64,
    /// Row whose model delivers `gain`.
    pub model: usize,
}

/// Estimated gain for each candidate bid.
///
/// A model fitted at a smaller budget is also affordable at a larger one, so
/// the effective gain is the running maximum of the raw gains and never
/// decreases with the bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidGainTable {
    /// Forecast horizon the table applies to; `None` for the whole task.
    pub horizon: Option<usize>,
    pub rows: Vec<BgtRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriceDecision {
    Sale { row: usize, bid: f64, gain: f64 },
    NoSale,
}

impl PriceDecision {
    pub fn price(&self) -> f64 {
        match self {
            PriceDecision::Sale { bid, .. } => *bid,
            PriceDecision::NoSale => 0.0,
        }
    }
}

impl BidGainTable {
    pub fn new(horizon: Option<usize>, bids: &[f64], raw_gains: &[f64]) -> Result<BidGainTable> {
        if bids.is_empty() || bids.len() != raw_gains.len() {
            return Err(MarketError::Estimator(format!(
                "bid-gain table needs matching non-empty columns, got {} bids and {} gains",
                bids.len(),
                raw_gains.len()
            )));
        }
        if bids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MarketError::Estimator("bids must be strictly increasing".into()));
        }
        if let Some(g) = raw_gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(MarketError::Estimator(format!("gain {g} is not a finite percentage")));
        }
        let mut rows = Vec::with_capacity(bids.len());
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, (&bid, &raw_gain)) in bids.iter().zip(raw_gains).enumerate() {
            if raw_gain > best.0 {
                best = (raw_gain, i);
            }
            rows.push(BgtRow { bid, raw_gain, gain: best.0, model: best.1 });
        }
        Ok(BidGainTable { horizon, rows })
    }

    pub fn gains(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gain).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["horizon", "bid", "raw_gain", "gain", "model"])?;
        let h = self.horizon.map_or_else(String::new, |h| h.to_string());
        for r in &self.rows {
            w.write_record([h.clone(), format!("{:?}", r.bid), format!("{:?}", r.raw_gain), format!("{:?}", r.gain), r.model.to_string()])?;
        }
        w.flush().map_err(|e| MarketError::io("<bid-gain table>", e))?;
        Ok(())
    }
}

/// Smallest bid among the feasible bids of maximal gain, where a bid is
/// feasible when it does not exceed the value function at its gain.
pub fn set_price(table: &BidGainTable, vf: &ValueFunction) -> PriceDecision {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in table.rows.iter().enumerate() {
        if vf.accepts(r.bid, r.gain) && best.is_none_or(|(_, g)| r.gain > g) {
            best = Some((i, r.gain));
        }
    }
    match best {
        Some((row, gain)) => PriceDecision::Sale { row, bid: table.rows[row].bid, gain },
        None => PriceDecision::NoSale,
    }
}
