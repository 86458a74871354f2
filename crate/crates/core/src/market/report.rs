use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::bgt::{BidGainTable, PriceDecision};
use crate::error::{MarketError, Result};
use crate::money::{Money, PriceScale};
use crate::tuning::Hyperparameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerRevenue {
    pub seller: u32,
    pub revenue: Money,
    /// Features of this seller used by any delivered model.
    pub groups: Vec<String>,
}

/// Price and payment for the whole task (`horizon == None`) or one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSettlement {
    pub horizon: Option<usize>,
    pub decision: PriceDecision,
    /// Bid at which the delivered model was fitted.
    pub model_bid: Option<f64>,
    /// Estimated gain of what was delivered; zero without a market forecast.
    pub estimated_gain: f64,
    pub payment: Money,
    pub revenues: Vec<(u32, Money)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredForecast {
    pub horizon: usize,
    pub timestamp: NaiveDateTime,
    pub forecast: f64,
    pub local: f64,
    pub actual: Option<f64>,
    pub from_market: bool,
}

/// Outcome of one buyer's session. `payment` equals the sum of `revenues`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub buyer: u32,
    pub launch: NaiveDateTime,
    pub stationary: bool,
    /// Money units per currency unit.
    pub resolution: u32,
    pub payment: Money,
    pub revenues: Vec<SellerRevenue>,
    /// Mean over settlements of the estimated gain delivered.
    pub estimated_gain: f64,
    /// Gain of the delivered forecasts over the local ones on the actual
    /// targets, when those are known.
    pub observed_gain: Option<f64>,
    pub local_hyperparameters: Hyperparameters,
    pub market_hyperparameters: Vec<(f64, Hyperparameters)>,
    pub settlements: Vec<HorizonSettlement>,
    pub forecasts: Vec<DeliveredForecast>,
    pub tables: Vec<BidGainTable>,
    pub warnings: Vec<String>,
}

impl SettlementReport {
    pub fn scale(&self) -> PriceScale {
        PriceScale::new(self.resolution).unwrap_or_default()
    }

    pub fn revenue_of(&self, seller: u32) -> Money {
        self.revenues.iter().find(|r| r.seller == seller).map_or(Money::ZERO, |r| r.revenue)
    }

    pub fn is_balanced(&self) -> bool {
        let total: Money = self.revenues.iter().map(|r| r.revenue).sum();
        total == self.payment
            && self.revenues.iter().all(|r| r.revenue >= Money::ZERO)
            && self.settlements.iter().all(|s| s.revenues.iter().map(|r| r.1).sum::<Money>() == s.payment)
    }
}

fn flush<W: Write>(mut w: csv::Writer<W>, what: &str) -> Result<()> {
    w.flush().map_err(|e| MarketError::io(what, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:?}"))
}

pub fn write_reports_json<W: Write>(reports: &[SettlementReport], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, reports)?;
    Ok(())
}

/// One row per buyer: payment, gains and delivery summary.
pub fn write_summary_csv<W: Write>(reports: &[SettlementReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["buyer", "launch", "stationary", "payment", "estimated_gain", "observed_gain", "market_rows"])?;
    for r in reports {
        w.write_record([
            r.buyer.to_string(),
            r.launch.to_string(),
            r.stationary.to_string(),
            r.scale().format(r.payment),
            format!("{:?}", r.estimated_gain),
            opt(r.observed_gain),
            r.forecasts.iter().filter(|f| f.from_market).count().to_string(),
        ])?;
    }
    flush(w, "<summary>")
}

/// One row per (buyer, seller) pair with the seller's revenue.
pub fn write_revenues_csv<W: Write>(reports: &[SettlementReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["buyer", "launch", "seller", "revenue", "groups"])?;
    for r in reports {
        for s in &r.revenues {
            w.write_record([
                r.buyer.to_string(),
                r.launch.to_string(),
                s.seller.to_string(),
                r.scale().format(s.revenue),
                s.groups.join(" "),
            ])?;
        }
    }
    flush(w, "<revenues>")
}

pub fn write_forecasts_csv<W: Write>(reports: &[SettlementReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["buyer", "horizon", "timestamp", "forecast", "local", "actual", "from_market"])?;
    for r in reports {
        for f in &r.forecasts {
            w.write_record([
                r.buyer.to_string(),
                f.horizon.to_string(),
                f.timestamp.to_string(),
                format!("{:?}", f.forecast),
                format!("{:?}", f.local),
                opt(f.actual),
                u8::from(f.from_market).to_string(),
            ])?;
        }
    }
    flush(w, "<forecasts>")
}

/// Bid against gain for every table of every report.
pub fn write_bid_gain_csv<W: Write>(reports: &[SettlementReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["buyer", "horizon", "bid", "raw_gain", "gain"])?;
    for r in reports {
        for t in &r.tables {
            let h = t.horizon.map_or_else(String::new, |h| h.to_string());
            for row in &t.rows {
                w.write_record([
                    r.buyer.to_string(),
                    h.clone(),
                    format!("{:?}", row.bid),
                    format!("{:?}", row.raw_gain),
                    format!("{:?}", row.gain),
                ])?;
            }
        }
    }
    flush(w, "<bid-gain tables>")
}

/// Running sums of estimated and observed gain per buyer over consecutive
/// sessions.
pub fn write_cumulative_gain_csv<W: Write>(rounds: &[Vec<SettlementReport>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session", "buyer", "launch", "estimated", "observed", "cumulative_estimated", "cumulative_observed"])?;
    let mut sums: std::collections::BTreeMap<u32, (f64, f64)> = Default::default();
    for (s, reports) in rounds.iter().enumerate() {
        for r in reports {
            let e = sums.entry(r.buyer).or_default();
            e.0 += r.estimated_gain;
            e.1 += r.observed_gain.unwrap_or(0.0);
            w.write_record([
                s.to_string(),
                r.buyer.to_string(),
                r.launch.to_string(),
                format!("{:?}", r.estimated_gain),
                opt(r.observed_gain),
                format!("{:?}", e.0),
                format!("{:?}", e.1),
            ])?;
        }
    }
    flush(w, "<cumulative gains>")
}
