use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, LossKind};
use crate::error::{MarketError, Result};
use crate::money::{Money, PriceScale};
use crate::splines::{GroupInfo, GroupedDesign};

/// Fitted coefficients indexed like the design columns.
///
/// `values` live in standardized space: the linear predictor of a raw row `x`
/// is `intercept + Σ_c values[c] · (x[c] − means[c]) / scales[c]`. Columns
/// outside the solver view have `scales[c] == 0` and a zero value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub loss: LossKind,
    pub values: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub groups: Vec<GroupInfo>,
}

impl CoefficientSet {
    /// Intercept-only model over `design`'s layout.
    pub fn constant(design: &GroupedDesign, intercept: f64, loss: LossKind) -> Self {
        let n = design.n_columns();
        CoefficientSet {
            loss,
            values: vec![0.0; n],
            intercept,
            means: vec![0.0; n],
            scales: vec![0.0; n],
            groups: design.groups().to_vec(),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.values.len()
    }

    /// A group is used when any of its coefficients is nonzero.
    pub fn group_used(&self, group: usize) -> bool {
        self.groups[group].columns.clone().any(|c| self.values[c] != 0.0)
    }

    pub fn used_groups(&self) -> Vec<usize> {
        (0..self.groups.len()).filter(|&g| self.group_used(g)).collect()
    }

    /// Sum of posted prices over used groups.
    pub fn cost(&self) -> Money {
        self.used_groups().into_iter().map(|g| self.groups[g].price).sum()
    }

    /// Coefficients and intercept on the raw column scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let mut beta = vec![0.0; self.values.len()];
        let mut b0 = self.intercept;
        for c in 0..self.values.len() {
            if self.values[c] != 0.0 && self.scales[c] > 0.0 {
                beta[c] = self.values[c] / self.scales[c];
                b0 -= beta[c] * self.means[c];
            }
        }
        (beta, b0)
    }

    pub fn linear_predictor(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.values.len() {
            return Err(MarketError::Shape {
                expected: format!("{} design columns", self.values.len()),
                actual: rows.ncols().to_string(),
            });
        }
        let (beta, b0) = self.raw_coefficients();
        let used: Vec<usize> = (0..beta.len()).filter(|&c| beta[c] != 0.0).collect();
        if used.is_empty() {
            return Ok(vec![b0; rows.nrows()]);
        }
        let sub = rows.select_columns(&used);
        let b = DVector::from_iterator(used.len(), used.iter().map(|&c| beta[c]));
        Ok((sub * b).iter().map(|v| v + b0).collect())
    }

    /// Forecasts for raw design rows. Squared-loss predictions are clipped to
    /// `[0, 1]` when `unit_target` is set; logistic returns probabilities.
    pub fn predict(&self, rows: &DMatrix<f64>, unit_target: bool) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(rows)?;
        Ok(match self.loss {
            LossKind::Squared if unit_target => eta.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            LossKind::Squared => eta,
            LossKind::Logistic => eta.into_iter().map(sigmoid).collect(),
        })
    }

    /// One line per group: id, owner, source, price, used flag and the
    /// group's coefficients separated by spaces.
    pub fn write_table<W: Write>(&self, out: W, scale: PriceScale) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group_id", "owner", "source", "price", "used", "coefficients"])?;
        for (g, info) in self.groups.iter().enumerate() {
            let coefs: Vec<String> = info.columns.clone().map(|c| format!("{:?}", self.values[c])).collect();
            w.write_record([
                info.group_id.to_string(),
                info.owner.to_string(),
                info.source.to_string(),
                format!("{:?}", scale.to_f64(info.price)),
                u8::from(self.group_used(g)).to_string(),
                coefs.join(" "),
            ])?;
        }
        w.write_record(["intercept", "", "", "", "", &format!("{:?}", self.intercept)])?;
        w.flush().map_err(|e| MarketError::io("<coefficient table>", e))?;
        Ok(())
    }
}
