//! Run configuration files and built-in presets.

use std::path::{Path, PathBuf};

use budget_market::benchmarks::BaselineKind;
use budget_market::dataset::{
    load_csv, synthesize, synthesize_zones, AgentSchema, CorrelatedZonesSpec, Link, MarketFrame, SyntheticSpec,
    SyntheticTruth, WIND_FEATURES,
};
use budget_market::market::{
    BidGrid, BuyerConfig, HyperparameterPolicy, RollingPlan, SellerConfig, SessionConfig, ValueFunction,
};
use budget_market::tuning::TuningGrid;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Hundred-feature linear data, budget 50.
    Case1,
    /// Hundred-feature linear data, budget 100.
    Case2,
    /// Hundred-feature data with an exponential link.
    Nonlinear,
    /// 500 features, 25% active.
    Advanced,
    /// Three correlated wind-like zones over four months.
    Zones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    HundredFeature {
        link: Link,
        rows: usize,
    },
    Advanced {
        n_features: usize,
        sparsity: f64,
        rows: usize,
    },
    Zones {
        #[serde(default = "default_zones")]
        zones: usize,
        #[serde(default = "default_hours")]
        hours: usize,
    },
    /// Long-format CSV: `zone_id, timestamp, target, features...`.
    Csv {
        path: PathBuf,
        zones: Vec<u32>,
        #[serde(default = "default_features")]
        features: Vec<String>,
        #[serde(default = "default_capacity")]
        capacity: f64,
    },
}

fn default_zones() -> usize {
    3
}

fn default_hours() -> usize {
    24 * 30 * 4
}

fn default_features() -> Vec<String> {
    WIND_FEATURES.iter().map(|s| s.to_string()).collect()
}

fn default_capacity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingConfig {
    pub first_launch: usize,
    pub sessions: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub buyer: u32,
    /// Budget in currency units; defaults to everything purchasable.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub grid: TuningGrid,
}

fn default_folds() -> usize {
    3
}

/// Either compare forecast files, or run the configured session and compare
/// delivered forecasts with the local ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub local: Option<PathBuf>,
    #[serde(default)]
    pub market: Option<PathBuf>,
    #[serde(default)]
    pub observations: Option<PathBuf>,
    /// Also fit this local baseline on each buyer's own features.
    #[serde(default)]
    pub baseline: Option<BaselineKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub session: Option<SessionConfig>,
    #[serde(default)]
    pub rolling: Option<RollingConfig>,
    #[serde(default)]
    pub tuning: Option<TuningConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

pub const DEFAULT_SEED: u64 = 7;

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        // relative data paths are taken from the config file's directory
        let dir = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DataConfig::Csv { path: data, .. } = &mut cfg.data {
            rebase(data);
        }
        if let Some(b) = &mut cfg.benchmark {
            for p in [&mut b.local, &mut b.market, &mut b.observations].into_iter().flatten() {
                rebase(p);
            }
        }
        Ok(cfg)
    }

    pub fn preset(preset: Preset) -> RunConfig {
        let hundred = |link, budget: f64, degree, knots, lambda| {
            let sellers = (11..=100u32)
                .map(|agent| SellerConfig { agent, prices: vec![if agent == 37 { 11.0 } else { 10.0 }] })
                .collect();
            RunConfig {
                seed: None,
                data: DataConfig::HundredFeature { link, rows: 2000 },
                session: Some(session(
                    vec![0],
                    sellers,
                    ValueFunction::Constant { value: budget },
                    BidGrid { min: 0.0, step: 10.0, max: Some(budget) },
                    HyperparameterPolicy::Fixed { degree, knots, lambda, alpha: 0.05 },
                    24,
                )),
                rolling: None,
                tuning: Some(TuningConfig { buyer: 0, budget: Some(budget), folds: 3, grid: small_grid() }),
                benchmark: None,
            }
        };
        match preset {
            Preset::Case1 => hundred(Link::Linear, 50.0, 1, 3, 0.1),
            Preset::Case2 => hundred(Link::Linear, 100.0, 1, 3, 0.1),
            Preset::Nonlinear => hundred(Link::Exponential, 100.0, 3, 5, 0.01),
            Preset::Advanced => {
                let sellers = (11..=500u32).map(|agent| SellerConfig { agent, prices: vec![10.0] }).collect();
                RunConfig {
                    seed: None,
                    data: DataConfig::Advanced { n_features: 500, sparsity: 0.25, rows: 2000 },
                    session: Some(session(
                        vec![0],
                        sellers,
                        ValueFunction::Constant { value: 100.0 },
                        BidGrid { min: 0.0, step: 20.0, max: Some(100.0) },
                        HyperparameterPolicy::Fixed { degree: 1, knots: 3, lambda: 0.1, alpha: 0.05 },
                        24,
                    )),
                    rolling: None,
                    tuning: None,
                    benchmark: None,
                }
            }
            Preset::Zones => {
                let zones: Vec<u32> = (1..=3).collect();
                let sellers = zones.iter().map(|&agent| SellerConfig { agent, prices: vec![1.0] }).collect();
                RunConfig {
                    seed: None,
                    data: DataConfig::Zones { zones: 3, hours: default_hours() },
                    session: Some(session(
                        zones,
                        sellers,
                        ValueFunction::Constant { value: 100.0 },
                        BidGrid::default(),
                        HyperparameterPolicy::Fixed { degree: 3, knots: 5, lambda: 0.001, alpha: 0.05 },
                        720,
                    )),
                    rolling: None,
                    tuning: Some(TuningConfig { buyer: 1, budget: None, folds: 3, grid: small_grid() }),
                    benchmark: Some(BenchmarkConfig { baseline: Some(BaselineKind::SplineLasso), ..Default::default() }),
                }
            }
        }
    }

    /// Builds the frame; synthetic generators are seeded with `seed`.
    pub fn frame(&self, seed: u64) -> budget_market::Result<(MarketFrame, Option<SyntheticTruth>)> {
        match &self.data {
            DataConfig::HundredFeature { link, rows } => {
                let (f, t) = synthesize(&SyntheticSpec::hundred_feature(*link, seed), *rows)?;
                Ok((f, Some(t)))
            }
            DataConfig::Advanced { n_features, sparsity, rows } => {
                let (f, t) = synthesize(&SyntheticSpec::advanced(*n_features, *sparsity, seed)?, *rows)?;
                Ok((f, Some(t)))
            }
            DataConfig::Zones { zones, hours } => Ok((
                synthesize_zones(&CorrelatedZonesSpec { n_zones: *zones, hours: *hours, seed, ..Default::default() })?,
                None,
            )),
            DataConfig::Csv { path, zones, features, capacity } => {
                let schema: Vec<AgentSchema> =
                    zones.iter().map(|&z| AgentSchema::new(z, features.clone(), *capacity)).collect();
                Ok((load_csv(path, &schema)?, None))
            }
        }
    }

    pub fn rolling_plan(&self, re_estimate: bool) -> Option<RollingPlan> {
        self.rolling.as_ref().map(|r| RollingPlan {
            first_launch: r.first_launch,
            sessions: r.sessions,
            step: r.step,
            re_estimate,
        })
    }
}

fn session(
    buyers: Vec<u32>,
    sellers: Vec<SellerConfig>,
    vf: ValueFunction,
    grid: BidGrid,
    model: HyperparameterPolicy,
    horizon: usize,
) -> SessionConfig {
    SessionConfig {
        horizon,
        target_lags: Vec::new(),
        launch: None,
        price_resolution: 100,
        grid,
        buyers: buyers.into_iter().map(|agent| BuyerConfig { agent, value_function: vf.clone() }).collect(),
        sellers,
        self_price: 0.0,
        estimator: None,
        stationarity: Default::default(),
        validation_fraction: 0.25,
        model,
        solver: Default::default(),
    }
}

fn small_grid() -> TuningGrid {
    TuningGrid {
        degrees: vec![1, 3],
        knot_counts: vec![3, 5],
        lambdas: budget_market::tuning::log_space(1e-3, 1.0, 4),
        ..TuningGrid::default()
    }
}
