//! Reference mechanism where each seller is paid per unit of coefficient
//! magnitude: a LASSO whose penalty weights are the sellers' reservation
//! prices, with the penalty itself as the payment.

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSource;
use crate::error::{MarketError, Result};
use crate::money::Money;
use crate::solver::{LossKind, Problem};
use crate::splines::{FeatureMap, FeatureSpec};

const CD_TOLERANCE: f64 = 1e-12;
const CD_SWEEPS: usize = 200_000;

/// A feature column offered to the buyer.
#[derive(Debug, Clone, PartialEq)]
pub struct LrmColumn {
    pub owner: u32,
    pub values: Vec<f64>,
    /// Reservation price per unit of `|β|`; ignored for the buyer's own columns.
    pub reservation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrmOutcome {
    /// Raw-scale coefficients, one per column.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub payment: f64,
    /// `(seller, Σ_k |u_k β_k|)` for every seller other than the buyer.
    pub revenues: Vec<(u32, f64)>,
}

/// Minimizes `(1/T)‖y − Xβ − β₀‖² + Σ_{j≠buyer} Σ_k u_{j,k} |β_{j,k}|`.
///
/// On standardized columns this is a weighted LASSO with weights
/// `u / (2 s)`, so the penalty acts on the raw coefficients; the intercept
/// and the buyer's own columns are not penalized.
pub fn lrm_benchmark(buyer: u32, columns: &[LrmColumn], target: &[f64]) -> Result<LrmOutcome> {
    if let Some(c) = columns.iter().find(|c| !(c.reservation.is_finite() && c.reservation >= 0.0)) {
        return Err(MarketError::Config(format!("reservation {} of seller {} must be >= 0", c.reservation, c.owner)));
    }
    let raw: Vec<Vec<f64>> = columns.iter().map(|c| c.values.clone()).collect();
    let specs: Vec<FeatureSpec> = columns
        .iter()
        .map(|c| FeatureSpec { owner: c.owner, source: FeatureSource::Exogenous(0), price: Money::ZERO })
        .collect();
    let design = FeatureMap::fit(&raw, None)?.expand(&specs, &raw)?;
    let problem = Problem::new(&design, target, LossKind::Squared)?;
    let scales = problem.coefficient_set(&vec![0.0; problem.live_columns().len()], 0.0).scales;
    let weights: Vec<f64> = problem
        .live_columns()
        .iter()
        .map(|&c| if columns[c].owner == buyer { 0.0 } else { columns[c].reservation / (2.0 * scales[c]) })
        .collect();
    let theta = problem.weighted_lasso(&weights, None, CD_TOLERANCE, CD_SWEEPS)?;
    let (coefficients, intercept) = problem.coefficient_set(&theta, 0.0).raw_coefficients();

    let mut revenues: Vec<(u32, f64)> = Vec::new();
    for (c, col) in columns.iter().enumerate() {
        if col.owner == buyer {
            continue;
        }
        let r = (col.reservation * coefficients[c]).abs();
        match revenues.iter_mut().find(|(o, _)| *o == col.owner) {
            Some(e) => e.1 += r,
            None => revenues.push((col.owner, r)),
        }
    }
    let payment = revenues.iter().map(|r| r.1).sum();
    Ok(LrmOutcome { coefficients, intercept, payment, revenues })
}
