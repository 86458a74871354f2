//! Market sessions: fit the buyer's local model and one budget-constrained
//! market model per grid bid, estimate gains, price the forecast against the
//! buyer's value function and settle payments.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bgt::{set_price, BidGainTable, BidGrid, PriceDecision};
use super::report::{DeliveredForecast, HorizonSettlement, SellerRevenue, SettlementReport};
use super::{gain, revenues, ValueFunction};
use crate::dataset::{split, FeatureSource, MarketFrame, SplitPolicy};
use crate::error::{MarketError, Result};
use crate::money::{Money, PriceScale};
use crate::solver::{CoefficientSet, LossKind, Problem, SolverConfig};
use crate::splines::{FeatureSpec, KnotPlacement, SplineConfig};
use crate::tuning::{tune, FittedDesign, Hyperparameters, TuningGrid, TuningTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stationarity {
    #[default]
    AssumeStationary,
    AssumeNonstationary,
    /// Stationary when the two halves of the history agree in mean and
    /// variance within 10%.
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainEstimator {
    /// Losses over the whole validation block.
    ValidationSplit,
    /// Losses over the `k` validation rows closest to each forecast row.
    KSimilar { k: usize },
}

/// How spline degree, knot count and penalty are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperparameterPolicy {
    Fixed {
        degree: usize,
        knots: usize,
        lambda: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// Tune once at the largest bid and reuse the result for every bid.
    Shared {
        #[serde(default)]
        grid: TuningGrid,
        #[serde(default = "default_folds")]
        folds: usize,
    },
    /// Tune separately at every bid.
    PerBid {
        #[serde(default)]
        grid: TuningGrid,
        #[serde(default = "default_folds")]
        folds: usize,
    },
}

fn default_alpha() -> f64 {
    0.05
}

fn default_folds() -> usize {
    3
}

impl Default for HyperparameterPolicy {
    fn default() -> Self {
        HyperparameterPolicy::Fixed { degree: 1, knots: 3, lambda: 0.01, alpha: default_alpha() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerConfig {
    pub agent: u32,
    pub value_function: ValueFunction,
}

/// Posted prices of one seller: one per exogenous feature followed by one per
/// offered target lag, or a single price applied to all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerConfig {
    pub agent: u32,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tolerance: 1e-9, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Forecast horizon `H` in rows.
    pub horizon: usize,
    /// Target lags offered as features; each must be at least `horizon` so the
    /// value is known when the session opens.
    #[serde(default)]
    pub target_lags: Vec<usize>,
    /// Row of the first forecast; defaults to `len − horizon`.
    #[serde(default)]
    pub launch: Option<usize>,
    #[serde(default = "default_resolution")]
    pub price_resolution: u32,
    #[serde(default)]
    pub grid: BidGrid,
    pub buyers: Vec<BuyerConfig>,
    #[serde(default)]
    pub sellers: Vec<SellerConfig>,
    /// Price a buyer pays for its own features.
    #[serde(default)]
    pub self_price: f64,
    /// Defaults to the validation split when stationary and `k = 10` nearest
    /// rows otherwise.
    #[serde(default)]
    pub estimator: Option<GainEstimator>,
    #[serde(default)]
    pub stationarity: Stationarity,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub model: HyperparameterPolicy,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_resolution() -> u32 {
    100
}

fn default_validation() -> f64 {
    0.25
}

impl SessionConfig {
    /// Every agent of the frame except `buyer_agent` sells all its features at
    /// `price`; one buyer with value function `vf`.
    pub fn uniform(frame: &MarketFrame, buyer_agent: u32, vf: ValueFunction, price: f64, horizon: usize) -> SessionConfig {
        SessionConfig {
            horizon,
            target_lags: Vec::new(),
            launch: None,
            price_resolution: default_resolution(),
            grid: BidGrid::default(),
            buyers: vec![BuyerConfig { agent: buyer_agent, value_function: vf }],
            sellers: frame
                .agents()
                .iter()
                .map(|a| a.schema.agent_id)
                .filter(|&id| id != buyer_agent)
                .map(|agent| SellerConfig { agent, prices: vec![price] })
                .collect(),
            self_price: 0.0,
            estimator: None,
            stationarity: Stationarity::default(),
            validation_fraction: default_validation(),
            model: HyperparameterPolicy::default(),
            solver: SolverSettings::default(),
        }
    }

    pub fn scale(&self) -> Result<PriceScale> {
        PriceScale::new(self.price_resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(MarketError::Config(m));
        if self.horizon == 0 {
            return cfg("horizon must be at least 1".into());
        }
        if let Some(&l) = self.target_lags.iter().find(|&&l| l < self.horizon) {
            return cfg(format!("target lag {l} is shorter than the horizon {}", self.horizon));
        }
        self.scale()?;
        if self.buyers.is_empty() {
            return cfg("session has no buyers".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.buyers {
            if !seen.insert(b.agent) {
                return cfg(format!("buyer {} listed twice", b.agent));
            }
            b.value_function.validate()?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sellers {
            if !seen.insert(s.agent) {
                return cfg(format!("seller {} listed twice", s.agent));
            }
            if s.prices.is_empty() || s.prices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return cfg(format!("seller {} needs finite non-negative prices", s.agent));
            }
        }
        if !(self.self_price.is_finite() && self.self_price >= 0.0) {
            return cfg("self_price must be finite and non-negative".into());
        }
        if let Some(GainEstimator::KSimilar { k: 0 }) = self.estimator {
            return cfg("k-similar estimation needs k >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return cfg(format!("validation_fraction must be in (0, 1), got {}", self.validation_fraction));
        }
        match &self.model {
            HyperparameterPolicy::Fixed { degree, knots, lambda, alpha } => {
                SplineConfig::new(*degree, *knots, KnotPlacement::Quantile)?;
                if !(lambda.is_finite() && *lambda >= 0.0) || !(*alpha > 0.0) {
                    return cfg("fixed model needs lambda >= 0 and alpha > 0".into());
                }
            }
            HyperparameterPolicy::Shared { grid, folds } | HyperparameterPolicy::PerBid { grid, folds } => {
                grid.normalized()?;
                if *folds < 2 {
                    return cfg("tuning needs at least 2 folds".into());
                }
            }
        }
        if self.solver.tolerance <= 0.0 || self.solver.max_iter == 0 {
            return cfg("solver tolerance and max_iter must be positive".into());
        }
        Ok(())
    }

    fn solver_config(&self, lambda: f64, budget: Money) -> Result<SolverConfig> {
        Ok(SolverConfig {
            tolerance: self.solver.tolerance,
            max_iter: self.solver.max_iter,
            scale: self.scale()?,
            ..SolverConfig::new(lambda, budget)
        })
    }

    /// First forecast row of a single session.
    pub fn launch_row(&self, frame: &MarketFrame) -> Result<usize> {
        let launch = match self.launch {
            Some(l) => l,
            None => frame.len().checked_sub(self.horizon).ok_or_else(|| {
                MarketError::Config(format!("frame of {} rows is shorter than the horizon", frame.len()))
            })?,
        };
        if launch + self.horizon > frame.len() {
            return Err(MarketError::Config(format!(
                "forecast rows {launch}..{} run past the frame ({} rows)",
                launch + self.horizon,
                frame.len()
            )));
        }
        Ok(launch)
    }
}

/// Mean and variance of the two halves agree within 10% (relative).
pub fn looks_stationary(series: &[f64]) -> bool {
    let half = series.len() / 2;
    if half < 2 {
        return true;
    }
    let moments = |s: &[f64]| {
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        (m, s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
    };
    let (m1, v1) = moments(&series[..half]);
    let (m2, v2) = moments(&series[half..]);
    let close = |a: f64, b: f64| (a - b).abs() <= 0.1 * a.abs().max(b.abs());
    close(m1, m2) && close(v1, v2)
}

/// Features a buyer can use, its own first, with values for every frame row
/// (`NaN` where a lag reaches before the first row).
#[derive(Debug, Clone)]
pub struct BuyerTask {
    pub specs: Vec<FeatureSpec>,
    pub n_own: usize,
    pub columns: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// First row at which every lag is available.
    pub first_row: usize,
}

impl BuyerTask {
    pub fn build(frame: &MarketFrame, config: &SessionConfig, buyer: u32) -> Result<BuyerTask> {
        let scale = config.scale()?;
        let agent = frame
            .agent(buyer)
            .ok_or_else(|| MarketError::Config(format!("buyer {buyer} is not in the frame")))?;
        let target = agent
            .target
            .clone()
            .ok_or_else(|| MarketError::Config(format!("buyer {buyer} has no target series")))?;
        let mut specs = Vec::new();
        let mut columns = Vec::new();
        let mut push_agent = |specs: &mut Vec<FeatureSpec>, id: u32, prices: &dyn Fn(usize) -> Money| -> Result<()> {
            let a = frame.agent(id).ok_or_else(|| MarketError::Config(format!("seller {id} is not in the frame")))?;
            let mut k = 0;
            for (j, x) in a.exogenous.iter().enumerate() {
                specs.push(FeatureSpec { owner: id, source: FeatureSource::Exogenous(j), price: prices(k) });
                columns.push(x.clone());
                k += 1;
            }
            if let Some(y) = &a.target {
                for &l in &config.target_lags {
                    specs.push(FeatureSpec { owner: id, source: FeatureSource::Lag(l), price: prices(k) });
                    columns.push((0..y.len()).map(|t| if t >= l { y[t - l] } else { f64::NAN }).collect());
                    k += 1;
                }
            }
            Ok(())
        };
        let own_price = scale.price(config.self_price)?;
        push_agent(&mut specs, buyer, &|_| own_price)?;
        let n_own = specs.len();
        let mut sellers: Vec<&SellerConfig> = config.sellers.iter().filter(|s| s.agent != buyer).collect();
        sellers.sort_by_key(|s| s.agent);
        for s in sellers {
            let a = frame.agent(s.agent).ok_or_else(|| MarketError::Config(format!("seller {} is not in the frame", s.agent)))?;
            let n = a.exogenous.len() + if a.target.is_some() { config.target_lags.len() } else { 0 };
            if s.prices.len() != 1 && s.prices.len() != n {
                return Err(MarketError::Config(format!(
                    "seller {} posts {} prices for {n} features",
                    s.agent,
                    s.prices.len()
                )));
            }
            let prices: Vec<Money> = s.prices.iter().map(|&p| scale.price(p)).collect::<Result<_>>()?;
            push_agent(&mut specs, s.agent, &|k| prices[if prices.len() == 1 { 0 } else { k }])?;
        }
        let first_row = config.target_lags.iter().copied().max().unwrap_or(0);
        Ok(BuyerTask { specs, n_own, columns, target, first_row })
    }

    pub fn pick(&self, rows: &[usize], features: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        self.columns[features].iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect()
    }

    pub fn all(&self) -> std::ops::Range<usize> {
        0..self.specs.len()
    }

    pub fn own(&self) -> std::ops::Range<usize> {
        0..self.n_own
    }

    /// Total posted price of the features other agents sell.
    pub fn purchasable_price(&self) -> Money {
        self.specs[self.n_own..].iter().map(|s| s.price).sum()
    }
}

#[derive(Debug, Clone)]
struct LocalModel {
    fitted: FittedDesign,
    hyper: Hyperparameters,
    coefficients: CoefficientSet,
}

#[derive(Debug, Clone)]
struct MarketDesign {
    degree: usize,
    knots: usize,
    fitted: FittedDesign,
}

#[derive(Debug, Clone)]
struct BidModel {
    bid: f64,
    design: usize,
    lambda: f64,
    coefficients: CoefficientSet,
    converged: bool,
}

/// Standardization of the reference design used for row distances.
#[derive(Debug, Clone)]
struct Reference {
    design: usize,
    columns: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    validation: Vec<Vec<f64>>,
}

impl Reference {
    fn rows(&self, matrix: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..matrix.nrows())
            .map(|r| {
                self.columns
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| (matrix[(r, c)] - self.means[j]) / self.scales[j])
                    .collect()
            })
            .collect()
    }
}

/// Everything estimated for one buyer before prices are set. It can be
/// reused by later sessions that skip re-estimation.
#[derive(Debug, Clone)]
pub struct FittedBuyer {
    buyer: u32,
    data: BuyerTask,
    train: Vec<usize>,
    validation: Vec<usize>,
    stationary: bool,
    local: LocalModel,
    designs: Vec<MarketDesign>,
    models: Vec<BidModel>,
    local_sq: Vec<f64>,
    market_sq: Vec<Vec<f64>>,
    reference: Reference,
    unit_target: bool,
}

fn squared_errors(y: &[f64], pred: &[f64]) -> Vec<f64> {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).collect()
}

fn rmse_over(sq: &[f64], rows: &[usize]) -> f64 {
    (rows.iter().map(|&r| sq[r]).sum::<f64>() / rows.len() as f64).sqrt()
}

fn estimated_gain(local: f64, market: f64) -> f64 {
    if local > 0.0 {
        gain(local, market).unwrap_or(0.0)
    } else {
        0.0
    }
}

impl FittedBuyer {
    /// Fits the local model and the market model at every grid bid on the
    /// history before `launch`.
    pub fn fit(frame: &MarketFrame, config: &SessionConfig, buyer: u32, launch: usize) -> Result<FittedBuyer> {
        config.validate()?;
        let data = BuyerTask::build(frame, config, buyer)?;
        let scale = config.scale()?;
        let history: Vec<usize> = (data.first_row..launch).collect();
        let n_val = ((history.len() as f64) * config.validation_fraction).round() as usize;
        if n_val == 0 {
            return Err(MarketError::Estimator(format!("buyer {buyer}: validation set is empty")));
        }
        if history.len() < n_val + 3 {
            return Err(MarketError::Estimator(format!(
                "buyer {buyer}: {} history rows are too few to train and validate",
                history.len()
            )));
        }
        let (train, validation) = history.split_at(history.len() - n_val);
        let (train, validation) = (train.to_vec(), validation.to_vec());
        let hist_y: Vec<f64> = history.iter().map(|&r| data.target[r]).collect();
        let y_train: Vec<f64> = train.iter().map(|&r| data.target[r]).collect();
        let y_val: Vec<f64> = validation.iter().map(|&r| data.target[r]).collect();
        let spread = y_train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(spread.1 > spread.0) {
            return Err(MarketError::Degenerate(format!("buyer {buyer}: target is constant over the training rows")));
        }
        let stationary = match config.stationarity {
            Stationarity::AssumeStationary => true,
            Stationarity::AssumeNonstationary => false,
            Stationarity::Heuristic => looks_stationary(&hist_y),
        };
        let unit_target = frame.normalized();
        let train_all = data.pick(&train, data.all());
        let val_all = data.pick(&validation, data.all());
        let train_own = data.pick(&train, data.own());
        let val_own = data.pick(&validation, data.own());
        let own_controls: Vec<usize> = data.own().collect();
        let bids = config.grid.bids(scale.to_f64(data.purchasable_price()))?;
        let top_budget = scale.budget(*bids.last().expect("grid is non-empty"))?;
        let timestamps: Vec<NaiveDateTime> = train.iter().map(|&r| frame.timestamps()[r]).collect();

        // hyperparameters of the local model and of the market model per bid
        let run_tune = |own_only: bool, grid: &TuningGrid, folds: usize, budget: Money| -> Result<Hyperparameters> {
            let fold_rows = split(&timestamps, &SplitPolicy::KFold { k: folds })?;
            let (specs, cols, controls): (&[FeatureSpec], &[Vec<f64>], &[usize]) = if own_only {
                (&data.specs[data.own()], &train_own, &[])
            } else {
                (&data.specs, &train_all, &own_controls)
            };
            let mut grid = grid.clone();
            if own_only {
                grid.alpha = 1.0;
            }
            let task = TuningTask { features: specs, columns: cols, target: &y_train, controls, folds: &fold_rows, unit_target };
            Ok(tune(&task, budget, &grid, &config.solver_config(0.0, budget)?)?.best)
        };
        let (local_hyper, alpha, placement) = match &config.model {
            HyperparameterPolicy::Fixed { degree, knots, lambda, alpha } => (
                Hyperparameters { degree: *degree, knots: *knots, lambda: *lambda },
                *alpha,
                KnotPlacement::Quantile,
            ),
            HyperparameterPolicy::Shared { grid, folds } | HyperparameterPolicy::PerBid { grid, folds } => {
                let own_total: Money = data.specs[data.own()].iter().map(|s| s.price).sum();
                (run_tune(true, grid, *folds, own_total)?, grid.alpha, grid.placement)
            }
        };
        let per_bid: Vec<Hyperparameters> = match &config.model {
            HyperparameterPolicy::Fixed { .. } => vec![local_hyper.clone(); bids.len()],
            HyperparameterPolicy::Shared { grid, folds } => vec![run_tune(false, grid, *folds, top_budget)?; bids.len()],
            HyperparameterPolicy::PerBid { grid, folds } => bids
                .iter()
                .map(|&b| run_tune(false, grid, *folds, scale.budget(b)?))
                .collect::<Result<_>>()?,
        };

        let spline = |h: &Hyperparameters| SplineConfig::new(h.degree, h.knots, placement);
        let local_fitted = FittedDesign::fit(&data.specs[data.own()], &train_own, &y_train, &[], Some(spline(&local_hyper)?), 1.0)?;
        let local_problem = Problem::new(&local_fitted.design, &y_train, LossKind::Squared)?;
        let local_fit = local_problem
            .solve_unconstrained(&config.solver_config(local_hyper.lambda, local_fitted.design.total_price())?, None)?;
        let local_pred = local_fit.coefficients.predict(local_fitted.apply(&val_own)?.matrix(), unit_target)?;
        let local = LocalModel { fitted: local_fitted, hyper: local_hyper.clone(), coefficients: local_fit.coefficients };

        let mut designs: Vec<MarketDesign> = Vec::new();
        let mut problems: Vec<Problem> = Vec::new();
        let mut val_designs = Vec::new();
        let mut models = Vec::with_capacity(bids.len());
        let mut market_sq = Vec::with_capacity(bids.len());
        let mut previous: Option<(usize, Vec<f64>)> = None;
        for (&bid, hyper) in bids.iter().zip(&per_bid) {
            let d = match designs.iter().position(|m| m.degree == hyper.degree && m.knots == hyper.knots) {
                Some(d) => d,
                None => {
                    let fitted = FittedDesign::fit(&data.specs, &train_all, &y_train, &own_controls, Some(spline(hyper)?), alpha)?;
                    problems.push(Problem::new(&fitted.design, &y_train, LossKind::Squared)?);
                    val_designs.push(fitted.apply(&val_all)?);
                    designs.push(MarketDesign { degree: hyper.degree, knots: hyper.knots, fitted });
                    designs.len() - 1
                }
            };
            let problem = &problems[d];
            let budget = scale.budget(bid)?;
            let warm = match &previous {
                Some((pd, theta)) if *pd == d => Some(theta.clone()),
                _ if hyper.degree == local.hyper.degree && hyper.knots == local.hyper.knots => {
                    let mut by_column = vec![0.0; designs[d].fitted.design.n_columns()];
                    by_column[..local.coefficients.values.len()].copy_from_slice(&local.coefficients.values);
                    let theta = problem.embed(&by_column);
                    (problem.cost_of(&theta) <= budget).then_some(theta)
                }
                _ => None,
            };
            let fit = problem.solve(&config.solver_config(hyper.lambda, budget)?, warm.as_deref())?;
            let pred = fit.coefficients.predict(val_designs[d].matrix(), unit_target)?;
            market_sq.push(squared_errors(&y_val, &pred));
            previous = Some((d, problem.embed(&fit.coefficients.values)));
            models.push(BidModel { bid, design: d, lambda: hyper.lambda, coefficients: fit.coefficients, converged: fit.converged });
        }

        let ref_design = models.last().expect("grid is non-empty").design;
        let train_matrix = designs[ref_design].fitted.design.matrix();
        let mut columns = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for c in designs[ref_design].fitted.design.live_columns() {
            let col = train_matrix.column(c);
            let m = col.mean();
            let sd = col.variance().sqrt();
            if sd > 1e-12 {
                columns.push(c);
                means.push(m);
                scales.push(sd);
            }
        }
        let mut reference = Reference { design: ref_design, columns, means, scales, validation: Vec::new() };
        reference.validation = reference.rows(val_designs[ref_design].matrix());

        Ok(FittedBuyer {
            buyer,
            local_sq: squared_errors(&y_val, &local_pred),
            data,
            train,
            validation,
            stationary,
            local,
            designs,
            models,
            market_sq,
            reference,
            unit_target,
        })
    }

    pub fn buyer(&self) -> u32 {
        self.buyer
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    /// Frame rows used for training and for gain estimation.
    pub fn rows(&self) -> (&[usize], &[usize]) {
        (&self.train, &self.validation)
    }

    pub fn bids(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.bid).collect()
    }

    pub fn model_at(&self, row: usize) -> &CoefficientSet {
        &self.models[row].coefficients
    }

    pub fn local_model(&self) -> &CoefficientSet {
        &self.local.coefficients
    }

    fn estimator(&self, config: &SessionConfig) -> GainEstimator {
        match config.estimator {
            Some(e) => e,
            None if self.stationary => GainEstimator::ValidationSplit,
            None => GainEstimator::KSimilar { k: 10 },
        }
    }

    fn table_over(&self, horizon: Option<usize>, rows: &[usize]) -> Result<BidGainTable> {
        let local = rmse_over(&self.local_sq, rows);
        let gains: Vec<f64> = self.market_sq.iter().map(|sq| estimated_gain(local, rmse_over(sq, rows))).collect();
        BidGainTable::new(horizon, &self.bids(), &gains)
    }

    /// Indices into the validation block of the `k` rows nearest to each
    /// forecast row, in transformed and standardized covariate space.
    pub fn similar_rows(&self, forecast_rows: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
        let design = &self.designs[self.reference.design].fitted;
        let matrix = design.apply(&self.data.pick(forecast_rows, self.data.all()))?;
        let queries = self.reference.rows(matrix.matrix());
        let k = k.min(self.validation.len());
        Ok(queries
            .iter()
            .map(|q| {
                let mut d: Vec<(f64, usize)> = self
                    .reference
                    .validation
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.into_iter().take(k).map(|(_, i)| i).collect()
            })
            .collect())
    }

    /// Bid-gain tables for a session launched at `launch`: one for the whole
    /// task when stationary, otherwise one per horizon.
    pub fn tables(&self, config: &SessionConfig, launch: usize) -> Result<Vec<BidGainTable>> {
        let all: Vec<usize> = (0..self.validation.len()).collect();
        if self.stationary {
            return Ok(vec![self.table_over(None, &all)?]);
        }
        let forecast_rows: Vec<usize> = (launch..launch + config.horizon).collect();
        match self.estimator(config) {
            GainEstimator::ValidationSplit => {
                (1..=config.horizon).map(|h| self.table_over(Some(h), &all)).collect()
            }
            GainEstimator::KSimilar { k } => self
                .similar_rows(&forecast_rows, k)?
                .iter()
                .enumerate()
                .map(|(i, rows)| self.table_over(Some(i + 1), rows))
                .collect(),
        }
    }

    fn forecast(&self, model: Option<usize>, rows: &[usize]) -> Result<Vec<f64>> {
        match model {
            None => {
                let m = self.local.fitted.apply(&self.data.pick(rows, self.data.own()))?;
                self.local.coefficients.predict(m.matrix(), self.unit_target)
            }
            Some(i) => {
                let design = &self.designs[self.models[i].design].fitted;
                let m = design.apply(&self.data.pick(rows, self.data.all()))?;
                self.models[i].coefficients.predict(m.matrix(), self.unit_target)
            }
        }
    }

    /// Sets prices against `vf`, settles payments and delivers forecasts for
    /// the `H` rows starting at `launch`.
    pub fn settle(&self, frame: &MarketFrame, config: &SessionConfig, vf: &ValueFunction, launch: usize) -> Result<SettlementReport> {
        let scale = config.scale()?;
        let tables = self.tables(config, launch)?;
        let forecast_rows: Vec<usize> = (launch..launch + config.horizon).collect();
        let local = self.forecast(None, &forecast_rows)?;
        let mut delivered = local.clone();
        let mut from_market = vec![false; forecast_rows.len()];
        let mut settlements = Vec::with_capacity(tables.len());
        let mut totals: BTreeMap<u32, Money> = BTreeMap::new();
        let mut groups_used: BTreeMap<u32, std::collections::BTreeSet<String>> = BTreeMap::new();
        let mut gains = Vec::new();
        for table in &tables {
            let decision = set_price(table, vf);
            let model = match decision {
                PriceDecision::Sale { row, .. } => Some(table.rows[row].model),
                PriceDecision::NoSale => None,
            };
            let (payment, per_seller) = match model {
                Some(m) => {
                    let coef = &self.models[m].coefficients;
                    let r = revenues(coef);
                    for g in coef.used_groups() {
                        let info = &coef.groups[g];
                        if info.price > Money::ZERO {
                            groups_used.entry(info.owner).or_default().insert(info.source.to_string());
                        }
                    }
                    (coef.cost(), r)
                }
                None => (Money::ZERO, BTreeMap::new()),
            };
            for (&owner, &r) in &per_seller {
                *totals.entry(owner).or_insert(Money::ZERO) += r;
            }
            let delivers = payment > Money::ZERO;
            let covered: Vec<usize> = match table.horizon {
                None => (0..forecast_rows.len()).collect(),
                Some(h) => vec![h - 1],
            };
            if delivers {
                let rows: Vec<usize> = covered.iter().map(|&i| forecast_rows[i]).collect();
                let f = self.forecast(model, &rows)?;
                for (&i, v) in covered.iter().zip(f) {
                    delivered[i] = v;
                    from_market[i] = true;
                }
            }
            let settled_gain = if delivers { table.rows[model.expect("sale")].gain } else { 0.0 };
            gains.push(settled_gain);
            settlements.push(HorizonSettlement {
                horizon: table.horizon,
                decision,
                model_bid: model.map(|m| self.models[m].bid),
                estimated_gain: settled_gain,
                payment,
                revenues: per_seller.iter().map(|(&seller, &revenue)| (seller, revenue)).collect(),
            });
        }

        let mut revenue_list = Vec::new();
        let mut owners: Vec<u32> = self.data.specs.iter().map(|s| s.owner).collect();
        owners.dedup();
        for owner in owners {
            let revenue = totals.get(&owner).copied().unwrap_or(Money::ZERO);
            if owner == self.buyer && revenue == Money::ZERO {
                continue;
            }
            revenue_list.push(SellerRevenue {
                seller: owner,
                revenue,
                groups: groups_used.remove(&owner).map(|s| s.into_iter().collect()).unwrap_or_default(),
            });
        }
        let payment: Money = settlements.iter().map(|s| s.payment).sum();

        let actual: Option<Vec<f64>> = frame
            .agent(self.buyer)
            .and_then(|a| a.target.as_ref())
            .map(|y| forecast_rows.iter().map(|&r| y[r]).collect());
        let observed_gain = actual.as_ref().map(|y| {
            let all: Vec<usize> = (0..y.len()).collect();
            estimated_gain(rmse_over(&squared_errors(y, &local), &all), rmse_over(&squared_errors(y, &delivered), &all))
        });
        let forecasts = forecast_rows
            .iter()
            .enumerate()
            .map(|(i, &r)| DeliveredForecast {
                horizon: i + 1,
                timestamp: frame.timestamps()[r],
                forecast: delivered[i],
                local: local[i],
                actual: actual.as_ref().map(|y| y[i]),
                from_market: from_market[i],
            })
            .collect();
        let warnings = self
            .models
            .iter()
            .filter(|m| !m.converged)
            .map(|m| format!("buyer {}: solver hit max_iter at bid {}", self.buyer, m.bid))
            .collect();

        Ok(SettlementReport {
            buyer: self.buyer,
            launch: frame.timestamps()[launch],
            stationary: self.stationary,
            resolution: scale.resolution(),
            payment,
            revenues: revenue_list,
            estimated_gain: gains.iter().sum::<f64>() / gains.len() as f64,
            observed_gain,
            local_hyperparameters: self.local.hyper.clone(),
            market_hyperparameters: self
                .models
                .iter()
                .map(|m| {
                    let d = &self.designs[m.design];
                    (m.bid, Hyperparameters { degree: d.degree, knots: d.knots, lambda: m.lambda })
                })
                .collect(),
            settlements,
            forecasts,
            tables,
            warnings,
        })
    }
}

/// Runs one session for every configured buyer, in parallel.
pub fn run_session(frame: &MarketFrame, config: &SessionConfig) -> Result<Vec<SettlementReport>> {
    config.validate()?;
    let launch = config.launch_row(frame)?;
    config
        .buyers
        .par_iter()
        .map(|b| FittedBuyer::fit(frame, config, b.agent, launch)?.settle(frame, config, &b.value_function, launch))
        .collect()
}

/// A sequence of sessions launched every `step` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingPlan {
    pub first_launch: usize,
    pub sessions: usize,
    pub step: usize,
    /// Refit all models at every session; otherwise the first session's
    /// models are reused and only gains, prices and forecasts are redone.
    pub re_estimate: bool,
}

pub fn run_rolling(frame: &MarketFrame, config: &SessionConfig, plan: &RollingPlan) -> Result<Vec<Vec<SettlementReport>>> {
    config.validate()?;
    if plan.sessions == 0 || (plan.sessions > 1 && plan.step == 0) {
        return Err(MarketError::Config("rolling plan needs sessions >= 1 and a positive step".into()));
    }
    let last = plan.first_launch + (plan.sessions - 1) * plan.step;
    if last + config.horizon > frame.len() {
        return Err(MarketError::Config(format!(
            "last session at row {last} needs {} rows beyond it; frame has {}",
            config.horizon,
            frame.len()
        )));
    }
    let mut fitted: Vec<Option<FittedBuyer>> = vec![None; config.buyers.len()];
    let mut rounds = Vec::with_capacity(plan.sessions);
    for s in 0..plan.sessions {
        let launch = plan.first_launch + s * plan.step;
        let refit = plan.re_estimate || s == 0;
        let results: Vec<Result<(FittedBuyer, SettlementReport)>> = config
            .buyers
            .par_iter()
            .zip(fitted.par_iter())
            .map(|(b, previous)| {
                let model = match previous {
                    Some(f) if !refit => f.clone(),
                    _ => FittedBuyer::fit(frame, config, b.agent, launch)?,
                };
                let report = model.settle(frame, config, &b.value_function, launch)?;
                Ok((model, report))
            })
            .collect();
        let mut reports = Vec::with_capacity(results.len());
        for (slot, r) in fitted.iter_mut().zip(results) {
            let (model, report) = r?;
            *slot = Some(model);
            reports.push(report);
        }
        rounds.push(reports);
    }
    Ok(rounds)
}
