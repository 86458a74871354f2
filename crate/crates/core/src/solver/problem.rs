use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{prox_knapsack, sigmoid, soft_threshold, softplus, CoefficientSet, LossKind, ProxGroup, SolverConfig};
use crate::error::{MarketError, Result};
use crate::money::Money;
use crate::splines::{GroupInfo, GroupedDesign};

// Above this many live columns the Gram matrix is not materialized.
const GRAM_LIMIT: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    /// `loss + λ‖Θ‖₁`; proximal descent never increases it.
    pub objective: f64,
    pub cost: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: CoefficientSet,
    pub trace: Vec<IterationRecord>,
    /// False when `max_iter` was reached before the stopping rule fired.
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// A design and target prepared once for repeated solves.
///
/// Live columns are standardized on the given rows and the squared-loss Gram
/// matrix and step constant `C` are cached, so fits at many budgets or
/// penalties share the setup cost.
#[derive(Debug, Clone)]
pub struct Problem {
    loss: LossKind,
    live: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    groups: Vec<GroupInfo>,
    prox_groups: Vec<ProxGroup>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    gram: Option<DMatrix<f64>>,
    zty: DVector<f64>,
    half_yy: f64,
    lipschitz: f64,
}

/// Per-iterate quantities reused by the next gradient step.
enum Cache {
    GramTheta(DVector<f64>),
    Residual(DVector<f64>),
    Eta(DVector<f64>),
}

impl Problem {
    pub fn new(design: &GroupedDesign, target: &[f64], loss: LossKind) -> Result<Problem> {
        let t = design.n_rows();
        if target.len() != t {
            return Err(MarketError::Shape {
                expected: format!("{t} target values"),
                actual: target.len().to_string(),
            });
        }
        if t < 2 {
            return Err(MarketError::Degenerate(format!("{t} training rows")));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::Numeric("non-finite target".into()));
        }
        let tf = t as f64;
        let y_raw = DVector::from_column_slice(target);
        let (y, y_mean) = match loss {
            LossKind::Squared => {
                let m = y_raw.mean();
                (y_raw.add_scalar(-m), m)
            }
            LossKind::Logistic => {
                let labels = y_raw.map(|v| if v == 0.0 { -1.0 } else { v });
                if labels.iter().any(|&v| v != 1.0 && v != -1.0) {
                    return Err(MarketError::Domain("logistic labels must be in {-1, +1} or {0, 1}".into()));
                }
                (labels, 0.0)
            }
        };

        let n = design.n_columns();
        let mut means = vec![0.0; n];
        let mut scales = vec![0.0; n];
        let mut live = Vec::new();
        for c in design.live_columns() {
            let col = design.matrix().column(c);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / tf;
            let sd = var.sqrt();
            if sd > 1e-12 * m.abs().max(1.0) {
                means[c] = m;
                scales[c] = sd;
                live.push(c);
            }
        }
        let p = live.len();
        let mut z = DMatrix::zeros(t, p);
        for (j, &c) in live.iter().enumerate() {
            let (m, s) = (means[c], scales[c]);
            for (dst, src) in z.column_mut(j).iter_mut().zip(design.matrix().column(c).iter()) {
                *dst = (src - m) / s;
            }
        }

        let mut position = vec![usize::MAX; n];
        for (j, &c) in live.iter().enumerate() {
            position[c] = j;
        }
        let prox_groups = design
            .groups()
            .iter()
            .map(|g| ProxGroup {
                columns: g.columns.clone().map(|c| position[c]).filter(|&j| j != usize::MAX).collect(),
                price: g.price,
            })
            .collect();

        let gram = (loss == LossKind::Squared && p <= GRAM_LIMIT).then(|| z.tr_mul(&z) / tf);
        let zty = if loss == LossKind::Squared { z.tr_mul(&y) / tf } else { DVector::zeros(p) };
        let half_yy = y.norm_squared() / (2.0 * tf);

        let lipschitz = if p == 0 {
            match loss {
                LossKind::Squared => 0.1,
                LossKind::Logistic => tf / 4.0 + 0.1,
            }
        } else {
            match (loss, &gram) {
                (LossKind::Squared, Some(g)) => largest_eigenvalue(p, |v| g * v) + 0.1,
                (LossKind::Squared, None) => largest_eigenvalue(p, |v| z.tr_mul(&(&z * v)) / tf) + 0.1,
                // The intercept is part of the smooth block; centered columns
                // make its curvature T decouple from ZᵀZ.
                (LossKind::Logistic, _) => largest_eigenvalue(p, |v| z.tr_mul(&(&z * v))).max(tf) / 4.0 + 0.1,
            }
        };

        Ok(Problem {
            loss,
            live,
            means,
            scales,
            groups: design.groups().to_vec(),
            prox_groups,
            z,
            y,
            y_mean,
            gram,
            zty,
            half_yy,
            lipschitz,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    /// Step constant `C`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    /// Design column of each coefficient position.
    pub fn live_columns(&self) -> &[usize] {
        &self.live
    }

    pub fn prox_groups(&self) -> &[ProxGroup] {
        &self.prox_groups
    }

    /// Standardized design restricted to live columns.
    pub fn standardized(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Centered target (squared loss) or ±1 labels (logistic).
    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    /// Picks this problem's positions out of a per-design-column vector.
    pub fn embed(&self, values_by_column: &[f64]) -> Vec<f64> {
        self.live.iter().map(|&c| values_by_column.get(c).copied().unwrap_or(0.0)).collect()
    }

    /// Total price of groups with a nonzero coefficient.
    pub fn cost_of(&self, theta: &[f64]) -> Money {
        self.prox_groups
            .iter()
            .filter(|g| g.columns.iter().any(|&j| theta[j] != 0.0))
            .map(|g| g.price)
            .sum()
    }

    pub fn coefficient_set(&self, theta: &[f64], intercept: f64) -> CoefficientSet {
        let mut values = vec![0.0; self.means.len()];
        for (j, &c) in self.live.iter().enumerate() {
            values[c] = theta[j];
        }
        CoefficientSet {
            loss: self.loss,
            values,
            intercept: match self.loss {
                LossKind::Squared => self.y_mean + intercept,
                LossKind::Logistic => intercept,
            },
            means: self.means.clone(),
            scales: self.scales.clone(),
            groups: self.groups.clone(),
        }
    }

    /// Training loss at `theta` (with the intercept offset for logistic).
    pub fn loss_at(&self, theta: &[f64], intercept: f64) -> f64 {
        self.evaluate(&DVector::from_column_slice(theta), intercept).0
    }

    fn evaluate(&self, theta: &DVector<f64>, b: f64) -> (f64, Cache) {
        let tf = self.n_rows() as f64;
        match (self.loss, &self.gram) {
            (LossKind::Squared, Some(g)) => {
                let gt = g * theta;
                let loss = self.half_yy - self.zty.dot(theta) + 0.5 * theta.dot(&gt);
                (loss.max(0.0), Cache::GramTheta(gt))
            }
            (LossKind::Squared, None) => {
                let r = &self.y - &self.z * theta;
                (r.norm_squared() / (2.0 * tf), Cache::Residual(r))
            }
            (LossKind::Logistic, _) => {
                let eta = &self.z * theta;
                let loss = self.y.iter().zip(eta.iter()).map(|(y, e)| softplus(-y * (b + e))).sum();
                (loss, Cache::Eta(eta))
            }
        }
    }

    /// `a = Θ − (1/C)∇L`; the logistic intercept takes its own gradient step.
    fn step(&self, theta: &DVector<f64>, cache: &Cache, b: &mut f64) -> DVector<f64> {
        let tf = self.n_rows() as f64;
        let c = self.lipschitz;
        match cache {
            Cache::GramTheta(gt) => theta + (&self.zty - gt) / c,
            Cache::Residual(r) => theta + self.z.tr_mul(r) / (tf * c),
            Cache::Eta(eta) => {
                let w = DVector::from_iterator(
                    self.y.len(),
                    self.y.iter().zip(eta.iter()).map(|(y, e)| y * sigmoid(-y * (*b + e))),
                );
                *b += w.sum() / c;
                theta + self.z.tr_mul(&w) / c
            }
        }
    }

    /// Budget-constrained proximal gradient from a feasible start.
    pub fn solve(&self, config: &SolverConfig, warm: Option<&[f64]>) -> Result<FitResult> {
        self.iterate(config, warm, true)
    }

    /// Same iteration with plain soft-thresholding and no budget.
    pub fn solve_unconstrained(&self, config: &SolverConfig, warm: Option<&[f64]>) -> Result<FitResult> {
        self.iterate(config, warm, false)
    }

    fn iterate(&self, config: &SolverConfig, warm: Option<&[f64]>, constrained: bool) -> Result<FitResult> {
        config.validate()?;
        if config.loss != self.loss {
            return Err(MarketError::Config("solver loss differs from the prepared problem".into()));
        }
        let p = self.live.len();
        let mut theta = match warm {
            Some(w) if w.len() != p => {
                return Err(MarketError::Shape { expected: format!("{p} warm-start values"), actual: w.len().to_string() })
            }
            Some(w) => DVector::from_column_slice(w),
            None => DVector::zeros(p),
        };
        // positions outside every group cannot be priced, so they stay zero
        let mut in_group = vec![false; p];
        for g in &self.prox_groups {
            for &j in &g.columns {
                in_group[j] = true;
            }
        }
        for j in 0..p {
            if !in_group[j] {
                theta[j] = 0.0;
            }
        }
        let start_cost = self.cost_of(theta.as_slice());
        if constrained && start_cost > config.budget {
            return Err(MarketError::Precondition(format!(
                "warm start costs {} units, budget is {}",
                start_cost.units(),
                config.budget.units()
            )));
        }

        let tau = config.lambda / self.lipschitz;
        let mut b = 0.0;
        let (mut loss, mut cache) = self.evaluate(&theta, b);
        let mut objective = loss + config.lambda * theta.lp_norm(1);
        let mut trace = vec![IterationRecord { iteration: 0, loss, objective, cost: start_cost }];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < config.max_iter {
            iterations += 1;
            let a = self.step(&theta, &cache, &mut b);
            theta = if constrained {
                DVector::from_vec(prox_knapsack(a.as_slice(), tau, &self.prox_groups, config.budget).theta)
            } else {
                DVector::from_iterator(p, (0..p).map(|j| if in_group[j] { soft_threshold(a[j], tau) } else { 0.0 }))
            };
            let prev = objective;
            (loss, cache) = self.evaluate(&theta, b);
            objective = loss + config.lambda * theta.lp_norm(1);
            trace.push(IterationRecord {
                iteration: iterations,
                loss,
                objective,
                cost: self.cost_of(theta.as_slice()),
            });
            if (prev - objective).abs() <= config.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("solver stopped at max_iter={} without meeting tolerance {}", config.max_iter, config.tolerance);
        }
        Ok(FitResult {
            coefficients: self.coefficient_set(theta.as_slice(), b),
            trace,
            converged,
            iterations,
        })
    }

    /// Coordinate descent for `L + Σ_j w_j |Θ_j|` (squared loss), used where
    /// a high-precision weighted LASSO solution is needed. Infinite weights
    /// pin a coefficient at zero.
    pub fn weighted_lasso(&self, weights: &[f64], warm: Option<&[f64]>, tolerance: f64, max_sweeps: usize) -> Result<Vec<f64>> {
        if self.loss != LossKind::Squared {
            return Err(MarketError::Config("weighted LASSO is defined for squared loss".into()));
        }
        let p = self.live.len();
        if weights.len() != p {
            return Err(MarketError::Shape { expected: format!("{p} weights"), actual: weights.len().to_string() });
        }
        let tf = self.n_rows() as f64;
        let mut theta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let mut r = &self.y - &self.z * DVector::from_column_slice(&theta);
        let diag: Vec<f64> = (0..p).map(|j| self.z.column(j).norm_squared() / tf).collect();
        for _ in 0..max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..p {
                if diag[j] == 0.0 {
                    continue;
                }
                let col = self.z.column(j);
                let rho = col.dot(&r) / tf + diag[j] * theta[j];
                let new = if weights[j].is_infinite() { 0.0 } else { soft_threshold(rho, weights[j]) / diag[j] };
                let delta = new - theta[j];
                if delta != 0.0 {
                    r.axpy(-delta, &col, 1.0);
                    theta[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change <= tolerance {
                return Ok(theta);
            }
        }
        log::warn!("coordinate descent stopped after {max_sweeps} sweeps");
        Ok(theta)
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite operator by power
/// iteration.
fn largest_eigenvalue(p: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut v = DVector::from_iterator(p, (0..p).map(|i| 1.0 + (i as f64 * 0.618_033_988_7).fract()));
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..5000 {
        let w = apply(&v);
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rq - estimate).abs() <= 1e-13 * rq.abs() {
            return rq.max(norm);
        }
        estimate = rq;
    }
    estimate
}
