//! Budget-constrained spline LASSO.
//!
//! The solver minimizes `L(Θ) + λ‖Θ‖₁` subject to the buyer's budget, where a
//! feature group costs its posted price as soon as any of its coefficients is
//! nonzero. Each proximal-gradient iteration solves the projection exactly:
//! soft-threshold every group, then pick the groups to keep with a 0-1
//! knapsack over their attainable objective reduction.

mod coefficients;
mod knapsack;
mod mixed;
mod problem;
mod weighted;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::money::{Money, PriceScale};
use crate::splines::GroupedDesign;

pub use coefficients::CoefficientSet;
pub use knapsack::{allocation_value, knapsack, KnapsackInstance};
pub use mixed::{fit_mixed_effects, MixedFit, ProductTerm};
pub use problem::{FitResult, IterationRecord, Problem};
pub use weighted::fit_coefficient_weighted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/2T) Σ (y − ŷ)²`
    Squared,
    /// `Σ log(1 + exp(−y ŷ))` with labels in {−1, +1}
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub budget: Money,
    pub tolerance: f64,
    pub max_iter: usize,
    pub scale: PriceScale,
    pub loss: LossKind,
}

impl SolverConfig {
    pub fn new(lambda: f64, budget: Money) -> Self {
        SolverConfig {
            lambda,
            budget,
            tolerance: 1e-9,
            max_iter: 20_000,
            scale: PriceScale::default(),
            loss: LossKind::Squared,
        }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_budget(mut self, budget: Money) -> Self {
        self.budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(MarketError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tolerance > 0.0) {
            return Err(MarketError::Config("solver tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(MarketError::Config("max_iter must be positive".into()));
        }
        if self.budget < Money::ZERO {
            return Err(MarketError::Config("budget must be non-negative".into()));
        }
        Ok(())
    }
}

/// Columns (positions into the coefficient vector) and price of one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxGroup {
    pub columns: Vec<usize>,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub theta: Vec<f64>,
    pub selected: Vec<bool>,
    /// Objective reduction each group achieves when kept.
    pub mu: Vec<f64>,
}

pub(crate) fn soft_threshold(v: f64, tau: f64) -> f64 {
    let m = v.abs() - tau;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// Exact minimizer of `½‖Θ − a‖² + τ‖Θ‖₁` over budget-feasible group
/// selections. A group kept at its soft-thresholded value lowers the
/// objective by `μ_g = Σ_m (|a_m| − τ)₊² / 2` relative to dropping it, so the
/// selection is a knapsack over `μ` with the group prices as weights.
pub fn prox_knapsack(a: &[f64], threshold: f64, groups: &[ProxGroup], budget: Money) -> ProxOutcome {
    let mu: Vec<f64> = groups
        .iter()
        .map(|g| {
            g.columns
                .iter()
                .map(|&c| {
                    let m = (a[c].abs() - threshold).max(0.0);
                    m * m / 2.0
                })
                .sum()
        })
        .collect();
    let instance = KnapsackInstance {
        weights: groups.iter().map(|g| g.price.units().max(0) as u64).collect(),
        values: mu.clone(),
        capacity: budget.units().max(0) as u64,
    };
    let selected = knapsack(&instance);
    let mut theta = vec![0.0; a.len()];
    for (g, keep) in groups.iter().zip(&selected) {
        if *keep {
            for &c in &g.columns {
                theta[c] = soft_threshold(a[c], threshold);
            }
        }
    }
    ProxOutcome { theta, selected, mu }
}

/// `½‖Θ − a‖² + τ‖Θ‖₁`, the quantity the proximal step minimizes.
pub fn prox_objective(theta: &[f64], a: &[f64], threshold: f64) -> f64 {
    theta
        .iter()
        .zip(a)
        .map(|(t, v)| 0.5 * (t - v) * (t - v) + threshold * t.abs())
        .sum()
}

/// Numerically stable `log(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient step `a = Θ − (1/C) ∂L/∂Θ` on an explicit design `z`.
///
/// Squared loss uses `L = (1/2T)‖y − b − zΘ‖²`; logistic loss uses
/// `L = Σ log(1 + exp(−y (b + zΘ)))` with labels in {−1, +1}.
pub fn gradient_step_vector(
    z: &nalgebra::DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    intercept: f64,
    loss: LossKind,
    c: f64,
) -> Result<Vec<f64>> {
    if z.nrows() != y.len() || z.ncols() != theta.len() {
        return Err(MarketError::Shape {
            expected: format!("{}x{} design", y.len(), theta.len()),
            actual: format!("{}x{}", z.nrows(), z.ncols()),
        });
    }
    if z.iter().chain(y).chain(theta).any(|v| !v.is_finite()) || !(c > 0.0) {
        return Err(MarketError::Numeric("gradient step on non-finite input".into()));
    }
    let th = nalgebra::DVector::from_column_slice(theta);
    let eta = z * &th;
    let weights: nalgebra::DVector<f64> = match loss {
        LossKind::Squared => {
            let t = y.len() as f64;
            nalgebra::DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(yv, e)| (yv - intercept - e) / t))
        }
        LossKind::Logistic => nalgebra::DVector::from_iterator(
            y.len(),
            y.iter().zip(eta.iter()).map(|(yv, e)| yv * sigmoid(-yv * (intercept + e))),
        ),
    };
    let step = z.tr_mul(&weights) / c;
    Ok(theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect())
}

/// Loss value matching [`gradient_step_vector`]'s conventions.
pub fn loss_value(z: &nalgebra::DMatrix<f64>, y: &[f64], theta: &[f64], intercept: f64, loss: LossKind) -> f64 {
    let th = nalgebra::DVector::from_column_slice(theta);
    let eta = z * th;
    match loss {
        LossKind::Squared => {
            y.iter().zip(eta.iter()).map(|(yv, e)| (yv - intercept - e).powi(2)).sum::<f64>() / (2.0 * y.len() as f64)
        }
        LossKind::Logistic => y.iter().zip(eta.iter()).map(|(yv, e)| softplus(-yv * (intercept + e))).sum(),
    }
}

/// Fits the budget-constrained model on `design` (training rows only).
///
/// `warm` must be budget-feasible under `config.budget`; its coefficients are
/// read by design column.
pub fn fit_budget_constrained(
    design: &GroupedDesign,
    target: &[f64],
    config: &SolverConfig,
    warm: Option<&CoefficientSet>,
) -> Result<FitResult> {
    let problem = Problem::new(design, target, config.loss)?;
    let start = warm.map(|w| problem.embed(&w.values));
    problem.solve(config, start.as_deref())
}

/// Plain proximal-gradient LASSO: the same iteration with no budget.
pub fn fit_lasso(design: &GroupedDesign, target: &[f64], config: &SolverConfig) -> Result<FitResult> {
    Problem::new(design, target, config.loss)?.solve_unconstrained(config, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn zero_input_selects_nothing() {
        let groups = vec![ProxGroup { columns: vec![0, 1], price: Money::from_units(5) }];
        let out = prox_knapsack(&[0.0, 0.0], 0.1, &groups, Money::from_units(100));
        assert_eq!(out.theta, vec![0.0, 0.0]);
        assert_eq!(out.selected, vec![false]);
    }

    #[test]
    fn single_group_closed_form() {
        let groups = vec![ProxGroup { columns: vec![0], price: Money::from_units(100) }];
        let out = prox_knapsack(&[2.0], 0.5, &groups, Money::from_units(100));
        assert_eq!(out.theta, vec![1.5]);
        assert_eq!(out.mu, vec![1.125]);
    }

    #[test]
    fn identical_groups_budget_for_one() {
        let groups = vec![
            ProxGroup { columns: vec![0, 1], price: Money::from_units(10) },
            ProxGroup { columns: vec![2, 3], price: Money::from_units(10) },
        ];
        let a = [1.0, -2.0, 1.0, -2.0];
        let out = prox_knapsack(&a, 0.25, &groups, Money::from_units(15));
        assert_eq!(out.selected, vec![true, false]);
        assert_eq!(out.theta, vec![0.75, -1.75, 0.0, 0.0]);
        // brute force over the four inclusion patterns
        let patterns = [[false, false], [true, false], [false, true], [true, true]];
        let best = patterns
            .iter()
            .filter(|p| p.iter().filter(|&&x| x).count() <= 1)
            .map(|p| {
                let th: Vec<f64> = (0..4).map(|c| if p[c / 2] { soft_threshold(a[c], 0.25) } else { 0.0 }).collect();
                prox_objective(&th, &a, 0.25)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(prox_objective(&out.theta, &a, 0.25), best);
    }

    #[test]
    fn squared_step_is_zero_at_least_squares_optimum() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = [2.0, 4.0, 6.0];
        let a = gradient_step_vector(&z, &y, &[2.0], 0.0, LossKind::Squared, 1.0).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn squared_step_matches_finite_difference() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = [2.0, 2.0];
        let c = 1.1;
        let a = gradient_step_vector(&z, &y, &[0.0], 0.0, LossKind::Squared, c).unwrap();
        let h = 1e-6;
        let fd = (loss_value(&z, &y, &[h], 0.0, LossKind::Squared) - loss_value(&z, &y, &[-h], 0.0, LossKind::Squared))
            / (2.0 * h);
        let expected = -fd / c;
        assert!((a[0] - expected).abs() <= 1e-6 * expected.abs());
    }

    #[test]
    fn saturated_logistic_step_is_identity() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 1.5]);
        let a = gradient_step_vector(&z, &[1.0, 1.0, 1.0], &[50.0], 0.0, LossKind::Logistic, 1.0).unwrap();
        assert!((a[0] - 50.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_design_rejected() {
        let z = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(
            gradient_step_vector(&z, &[1.0], &[0.0], 0.0, LossKind::Squared, 1.0),
            Err(MarketError::Numeric(_))
        ));
    }

    #[test]
    fn shifted_sign_form_matches_soft_threshold() {
        for &(a, t) in &[(1.5f64, 0.5f64), (-1.5, 0.5), (0.2, 0.5), (-0.2, 0.5), (0.5, 0.5), (-3.0, 0.0)] {
            let shifted = if a.abs() > t { f64::signum(a - t) * (a.abs() - t) } else { 0.0 };
            assert_eq!(shifted, soft_threshold(a, t));
        }
    }
}
