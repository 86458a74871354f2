//! Day-ahead lag schedules and per-horizon design tables.

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use super::{FeatureSource, MarketFrame};
use crate::error::{MarketError, Result};

/// Target lags usable at each horizon. `lags[h - 1]` lists offsets `ℓ`
/// (relative to the forecast timestamp) available for horizon `h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSchedule {
    lags: Vec<Vec<usize>>,
}

impl LagSchedule {
    pub fn new(lags: Vec<Vec<usize>>) -> Result<Self> {
        if lags.is_empty() {
            return Err(MarketError::Config("lag schedule needs a horizon >= 1".into()));
        }
        for (h, set) in lags.iter().enumerate() {
            if let Some(&l) = set.iter().find(|&&l| l <= h) {
                return Err(MarketError::Config(format!(
                    "horizon {} cannot use lag {l}: value not observed at launch",
                    h + 1
                )));
            }
        }
        Ok(LagSchedule { lags })
    }

    /// Launch-time schedule: with `max_lag` = L, horizon `h` keeps lags
    /// `h..=L` so that every lag was measured at or before launch. Horizons past
    /// `L` are exogenous-only.
    pub fn day_ahead(max_lag: usize, horizon: usize) -> Self {
        LagSchedule {
            lags: (1..=horizon.max(1)).map(|h| (h..=max_lag).collect()).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.lags.len()
    }

    pub fn lags(&self, h: usize) -> &[usize] {
        &self.lags[h - 1]
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().flatten().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaggedColumn {
    pub agent_id: u32,
    pub source: FeatureSource,
    pub values: Vec<f64>,
}

/// Design for one horizon: row `r` forecasts frame row `target_rows[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedTable {
    pub horizon: usize,
    pub target_rows: Vec<usize>,
    /// `(agent_id, target values)` for agents with a target.
    pub targets: Vec<(u32, Vec<f64>)>,
    pub columns: Vec<LaggedColumn>,
    /// Launches skipped because a lag or target fell outside the frame.
    pub dropped: usize,
}

/// Builds one table per horizon for launches at `launch_hour` each day.
pub fn build_lagged(
    frame: &MarketFrame,
    schedule: &LagSchedule,
    launch_hour: u32,
) -> Result<Vec<LaggedTable>> {
    if launch_hour > 23 {
        return Err(MarketError::Config(format!("launch hour {launch_hour} > 23")));
    }
    let n = frame.len();
    if schedule.horizon() >= n || schedule.max_lag() + schedule.horizon() > n {
        return Err(MarketError::Range(format!(
            "schedule (horizon {}, max lag {}) exceeds frame of {n} rows",
            schedule.horizon(),
            schedule.max_lag()
        )));
    }
    let launches: Vec<usize> = frame
        .timestamps()
        .iter()
        .enumerate()
        .filter(|(_, ts)| ts.hour() == launch_hour && ts.minute() == 0)
        .map(|(i, _)| i)
        .collect();

    let mut tables = Vec::with_capacity(schedule.horizon());
    for h in 1..=schedule.horizon() {
        let lags = schedule.lags(h);
        let mut rows = Vec::new();
        let mut dropped = 0;
        for &launch in &launches {
            let t = launch + h;
            if t < n && lags.iter().all(|&l| t >= l) {
                rows.push(t);
            } else {
                dropped += 1;
            }
        }
        let mut columns = Vec::new();
        for agent in frame.agents() {
            for (k, series) in agent.exogenous.iter().enumerate() {
                columns.push(LaggedColumn {
                    agent_id: agent.schema.agent_id,
                    source: FeatureSource::Exogenous(k),
                    values: rows.iter().map(|&t| series[t]).collect(),
                });
            }
            if let Some(target) = &agent.target {
                for &l in lags {
                    columns.push(LaggedColumn {
                        agent_id: agent.schema.agent_id,
                        source: FeatureSource::Lag(l),
                        values: rows.iter().map(|&t| target[t - l]).collect(),
                    });
                }
            }
        }
        let targets = frame
            .agents()
            .iter()
            .filter_map(|a| {
                a.target
                    .as_ref()
                    .map(|y| (a.schema.agent_id, rows.iter().map(|&t| y[t]).collect()))
            })
            .collect();
        tables.push(LaggedTable {
            horizon: h,
            target_rows: rows,
            targets,
            columns,
            dropped,
        });
    }
    Ok(tables)
}
