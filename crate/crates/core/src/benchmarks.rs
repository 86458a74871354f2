//! Local baselines and the local-versus-market comparison harness.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, Fold, SplitPolicy};
use crate::error::{MarketError, Result};
use crate::market::SettlementReport;
use crate::money::Money;
use crate::solver::{CoefficientSet, LossKind, Problem, SolverConfig};
use crate::splines::{FeatureSpec, SplineConfig};
use crate::tuning::{tune, validation_loss, FittedDesign, Hyperparameters, TuningGrid, TuningTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Lasso,
    SplineLasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Plain LASSO uses only `lambdas`.
    #[serde(default)]
    pub grid: TuningGrid,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    3
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, grid: TuningGrid) -> Self {
        BaselineConfig { kind, grid, folds: default_folds() }
    }
}

/// A local model refitted on all rows at the cross-validated hyperparameters.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub design: FittedDesign,
    pub coefficients: CoefficientSet,
    /// Spline degree and knots are zero for plain LASSO.
    pub hyperparameters: Hyperparameters,
    /// Mean over folds of the validation RMSE.
    pub cv_rmse: f64,
    pub training_rmse: f64,
}

impl LocalFit {
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.coefficients.predict(self.design.apply(columns)?.matrix(), false)
    }
}

pub fn rmse(y: &[f64], pred: &[f64]) -> f64 {
    validation_loss(y, pred, LossKind::Squared).sqrt()
}

/// `100 (1 − market / local)`; negative when the market forecast is worse.
pub fn improvement(local_rmse: f64, market_rmse: f64) -> f64 {
    100.0 * (1.0 - market_rmse / local_rmse)
}

/// Fits a buyer's local model on its own feature columns.
pub fn fit_local(columns: &[Vec<f64>], target: &[f64], config: &BaselineConfig) -> Result<LocalFit> {
    let t = target.len();
    if columns.iter().any(|c| c.len() != t) {
        return Err(MarketError::Shape { expected: format!("{t} rows per column"), actual: "ragged columns".into() });
    }
    let (lo, hi) = target.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(MarketError::Degenerate("local target is constant".into()));
    }
    let specs: Vec<FeatureSpec> = (0..columns.len())
        .map(|k| FeatureSpec { owner: 0, source: crate::dataset::FeatureSource::Exogenous(k), price: Money::ZERO })
        .collect();
    let folds = split(&crate::dataset::hourly_index(crate::dataset::default_start(), t), &SplitPolicy::KFold { k: config.folds })?;
    let mut grid = config.grid.normalized()?;
    grid.alpha = 1.0;
    let base = SolverConfig::new(0.0, Money::ZERO);

    let (hyper, table): (Hyperparameters, Vec<(usize, f64)>) = match config.kind {
        BaselineKind::SplineLasso => {
            let task = TuningTask { features: &specs, columns, target, controls: &[], folds: &folds, unit_target: false };
            let out = tune(&task, Money::ZERO, &grid, &base)?;
            let rows = out
                .table
                .iter()
                .filter(|r| r.degree == out.best.degree && r.knots == out.best.knots && r.lambda == out.best.lambda)
                .map(|r| (r.fold, r.loss))
                .collect();
            (out.best, rows)
        }
        BaselineKind::Lasso => lasso_cv(&specs, columns, target, &folds, &grid.lambdas)?,
    };
    let cv_rmse = table.iter().map(|(_, mse)| mse.sqrt()).sum::<f64>() / table.len() as f64;

    let spline = match config.kind {
        BaselineKind::SplineLasso => Some(SplineConfig::new(hyper.degree, hyper.knots, grid.placement)?),
        BaselineKind::Lasso => None,
    };
    let design = FittedDesign::fit(&specs, columns, target, &[], spline, 1.0)?;
    let problem = Problem::new(&design.design, target, LossKind::Squared)?;
    let fit = problem.solve_unconstrained(&SolverConfig { lambda: hyper.lambda, ..base }, None)?;
    let pred = fit.coefficients.predict(design.design.matrix(), false)?;
    Ok(LocalFit { training_rmse: rmse(target, &pred), design, coefficients: fit.coefficients, hyperparameters: hyper, cv_rmse })
}

fn lasso_cv(
    specs: &[FeatureSpec],
    columns: &[Vec<f64>],
    target: &[f64],
    folds: &[Fold],
    lambdas: &[f64],
) -> Result<(Hyperparameters, Vec<(usize, f64)>)> {
    let pick = |rows: &[usize]| -> Vec<Vec<f64>> { columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect() };
    let mut losses = vec![Vec::new(); lambdas.len()];
    for (f, fold) in folds.iter().enumerate() {
        let y_train: Vec<f64> = fold.train.iter().map(|&r| target[r]).collect();
        let y_val: Vec<f64> = fold.validation.iter().map(|&r| target[r]).collect();
        let design = FittedDesign::fit(specs, &pick(&fold.train), &y_train, &[], None, 1.0)?;
        let val = design.apply(&pick(&fold.validation))?;
        let problem = match Problem::new(&design.design, &y_train, LossKind::Squared) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("fold {f} unusable: {e}");
                continue;
            }
        };
        let mut warm: Option<Vec<f64>> = None;
        for (i, &lambda) in lambdas.iter().enumerate().rev() {
            let fit = problem.solve_unconstrained(&SolverConfig::new(lambda, Money::ZERO), warm.as_deref())?;
            let pred = fit.coefficients.predict(val.matrix(), false)?;
            losses[i].push((f, validation_loss(&y_val, &pred, LossKind::Squared)));
            warm = Some(problem.embed(&fit.coefficients.values));
        }
    }
    let mut best: Option<(usize, f64)> = None;
    // larger λ first so ties keep the sparser model
    for i in (0..lambdas.len()).rev() {
        if losses[i].is_empty() {
            continue;
        }
        let mean = losses[i].iter().map(|l| l.1).sum::<f64>() / losses[i].len() as f64;
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((i, mean));
        }
    }
    let (i, _) = best.ok_or_else(|| MarketError::Tuning("every fold was degenerate".into()))?;
    Ok((Hyperparameters { degree: 0, knots: 0, lambda: lambdas[i] }, std::mem::take(&mut losses[i])))
}

/// A forecast for one zone, issue time and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub zone: u32,
    pub timestamp: NaiveDateTime,
    pub horizon: usize,
    pub forecast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub zone: u32,
    pub timestamp: NaiveDateTime,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub zone: u32,
    /// `None` aggregates every horizon of the zone.
    pub horizon: Option<usize>,
    pub n: usize,
    pub rmse_local: f64,
    pub rmse_market: f64,
    pub improvement: f64,
}

type Key = (u32, NaiveDateTime, usize);

/// RMSE of local and market forecasts per zone and per (zone, horizon) on
/// the records present in both sets and in the observations.
pub fn compare(local: &[ForecastRecord], market: &[ForecastRecord], actual: &[Observation]) -> Result<Vec<ComparisonRow>> {
    let truth: BTreeMap<(u32, NaiveDateTime), f64> = actual.iter().map(|o| ((o.zone, o.timestamp), o.value)).collect();
    let market: BTreeMap<Key, f64> = market.iter().map(|r| ((r.zone, r.timestamp, r.horizon), r.forecast)).collect();
    // (zone, horizon) → (Σ local², Σ market², n)
    let mut acc: BTreeMap<(u32, Option<usize>), (f64, f64, usize)> = BTreeMap::new();
    for r in local {
        let (Some(&y), Some(&m)) = (truth.get(&(r.zone, r.timestamp)), market.get(&(r.zone, r.timestamp, r.horizon))) else {
            continue;
        };
        for key in [(r.zone, None), (r.zone, Some(r.horizon))] {
            let e = acc.entry(key).or_default();
            e.0 += (y - r.forecast).powi(2);
            e.1 += (y - m).powi(2);
            e.2 += 1;
        }
    }
    if acc.is_empty() {
        return Err(MarketError::Estimator("no aligned test rows to compare".into()));
    }
    Ok(acc
        .into_iter()
        .map(|((zone, horizon), (sl, sm, n))| {
            let rmse_local = (sl / n as f64).sqrt();
            let rmse_market = (sm / n as f64).sqrt();
            let improvement = if rmse_local > 0.0 { improvement(rmse_local, rmse_market) } else { 0.0 };
            ComparisonRow { zone, horizon, n, rmse_local, rmse_market, improvement }
        })
        .collect())
}

/// Mean of the per-zone (all-horizon) improvements.
pub fn mean_zone_improvement(rows: &[ComparisonRow]) -> f64 {
    let zones: Vec<f64> = rows.iter().filter(|r| r.horizon.is_none()).map(|r| r.improvement).collect();
    zones.iter().sum::<f64>() / zones.len() as f64
}

/// Local forecasts, delivered forecasts and actual targets from session
/// reports, keyed by buyer as zone.
pub fn records_from_reports(reports: &[SettlementReport]) -> (Vec<ForecastRecord>, Vec<ForecastRecord>, Vec<Observation>) {
    let mut local = Vec::new();
    let mut market = Vec::new();
    let mut actual = Vec::new();
    for r in reports {
        for f in &r.forecasts {
            local.push(ForecastRecord { zone: r.buyer, timestamp: f.timestamp, horizon: f.horizon, forecast: f.local });
            market.push(ForecastRecord { zone: r.buyer, timestamp: f.timestamp, horizon: f.horizon, forecast: f.forecast });
            if let Some(v) = f.actual {
                actual.push(Observation { zone: r.buyer, timestamp: f.timestamp, value: v });
            }
        }
    }
    (local, market, actual)
}

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Reads `zone,timestamp,horizon,forecast` rows.
pub fn read_forecasts<R: Read>(input: R) -> Result<Vec<ForecastRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let expect = ["zone", "timestamp", "horizon", "forecast"];
    if headers.len() < 4 || headers.iter().take(4).zip(expect).any(|(a, b)| a.trim() != b) {
        return Err(MarketError::Schema(format!("forecast file needs columns {expect:?}, found {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| MarketError::Schema(format!("forecast row {}: bad {what}", i + 1));
        out.push(ForecastRecord {
            zone: rec[0].trim().parse().map_err(|_| bad("zone"))?,
            timestamp: NaiveDateTime::parse_from_str(rec[1].trim(), TIME_FORMAT).map_err(|_| bad("timestamp"))?,
            horizon: rec[2].trim().parse().map_err(|_| bad("horizon"))?,
            forecast: rec[3].trim().parse().map_err(|_| bad("forecast"))?,
        });
    }
    Ok(out)
}

pub fn write_forecasts<W: Write>(records: &[ForecastRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["zone", "timestamp", "horizon", "forecast"])?;
    for r in records {
        w.write_record([r.zone.to_string(), r.timestamp.format(TIME_FORMAT).to_string(), r.horizon.to_string(), format!("{:?}", r.forecast)])?;
    }
    w.flush().map_err(|e| MarketError::io("<forecasts>", e))
}

/// Reads `zone,timestamp,actual` rows.
pub fn read_observations<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(MarketError::Schema(format!("observation row {} needs zone,timestamp,actual", i + 1)));
        }
        let bad = |what: &str| MarketError::Schema(format!("observation row {}: bad {what}", i + 1));
        out.push(Observation {
            zone: rec[0].trim().parse().map_err(|_| bad("zone"))?,
            timestamp: NaiveDateTime::parse_from_str(rec[1].trim(), TIME_FORMAT).map_err(|_| bad("timestamp"))?,
            value: rec[2].trim().parse().map_err(|_| bad("actual"))?,
        });
    }
    Ok(out)
}

pub fn write_observations<W: Write>(records: &[Observation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["zone", "timestamp", "actual"])?;
    for r in records {
        w.write_record([r.zone.to_string(), r.timestamp.format(TIME_FORMAT).to_string(), format!("{:?}", r.value)])?;
    }
    w.flush().map_err(|e| MarketError::io("<observations>", e))
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["zone", "horizon", "n", "rmse_local", "rmse_market", "improvement"])?;
    for r in rows {
        w.write_record([
            r.zone.to_string(),
            r.horizon.map_or_else(|| "all".to_string(), |h| h.to_string()),
            r.n.to_string(),
            format!("{:?}", r.rmse_local),
            format!("{:?}", r.rmse_market),
            format!("{:?}", r.improvement),
        ])?;
    }
    w.flush().map_err(|e| MarketError::io("<comparison>", e))
}
