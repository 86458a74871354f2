//! Multi-agent time-series datasets.
//!
//! A [`MarketFrame`] holds hourly series for every agent taking part in a
//! market session: the agent's target (power, optional for pure data sellers)
//! and its exogenous covariates. Frames are immutable once built and validated.

mod ingest;
mod lags;
mod split;
mod synth;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

pub use ingest::{load_csv, write_csv, write_wide_csv, wind_schema, WIND_FEATURES};
pub use lags::{build_lagged, LagSchedule, LaggedColumn, LaggedTable};
pub use split::{split, Fold, SplitPolicy};
pub use synth::{
    synthesize, synthesize_zones, CorrelatedZonesSpec, Link, SyntheticSpec, SyntheticTruth,
};

/// Where a raw market feature comes from inside its owner's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// k-th exogenous covariate (0-based).
    Exogenous(usize),
    /// Target value `lag` steps before the forecast timestamp.
    Lag(usize),
}

impl std::fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureSource::Exogenous(k) => write!(f, "x{k}"),
            FeatureSource::Lag(l) => write!(f, "lag{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSchema {
    pub agent_id: u32,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    /// Divisor applied to raw targets; 1.0 for pre-normalized data.
    pub capacity: f64,
}

impl AgentSchema {
    pub fn new(agent_id: u32, feature_names: Vec<String>, capacity: f64) -> Self {
        AgentSchema {
            agent_id,
            n_features: feature_names.len(),
            feature_names,
            capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_names.len() != self.n_features {
            return Err(MarketError::Schema(format!(
                "agent {} declares {} features but names {}",
                self.agent_id,
                self.n_features,
                self.feature_names.len()
            )));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(MarketError::Schema(format!(
                "agent {} capacity must be positive, got {}",
                self.agent_id, self.capacity
            )));
        }
        Ok(())
    }
}

/// One agent's data inside a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSeries {
    pub schema: AgentSchema,
    /// Target series; `None` for agents that only sell covariates.
    pub target: Option<Vec<f64>>,
    /// `exogenous[k][t]`
    pub exogenous: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketFrame {
    timestamps: Vec<NaiveDateTime>,
    agents: Vec<AgentSeries>,
    lag_count: usize,
    normalized: bool,
    dropped_rows: usize,
}

impl MarketFrame {
    /// Builds and validates a frame. `normalized` asserts targets lie in `[0, 1]`.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        agents: Vec<AgentSeries>,
        lag_count: usize,
        normalized: bool,
    ) -> Result<Self> {
        let frame = MarketFrame {
            timestamps,
            agents,
            lag_count,
            normalized,
            dropped_rows: 0,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub(crate) fn with_dropped_rows(mut self, dropped: usize) -> Self {
        self.dropped_rows = dropped;
        self
    }

    fn validate(&self) -> Result<()> {
        let t = self.timestamps.len();
        if self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MarketError::Integrity(
                "timestamps must be strictly increasing".into(),
            ));
        }
        let mut ids = std::collections::HashSet::new();
        for agent in &self.agents {
            agent.schema.validate()?;
            if !ids.insert(agent.schema.agent_id) {
                return Err(MarketError::Schema(format!(
                    "duplicate agent id {}",
                    agent.schema.agent_id
                )));
            }
            if agent.exogenous.len() != agent.schema.n_features {
                return Err(MarketError::Schema(format!(
                    "agent {} has {} feature series, schema declares {}",
                    agent.schema.agent_id,
                    agent.exogenous.len(),
                    agent.schema.n_features
                )));
            }
            for series in &agent.exogenous {
                if series.len() != t {
                    return Err(MarketError::Shape {
                        expected: format!("{t} rows"),
                        actual: series.len().to_string(),
                    });
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return Err(MarketError::Integrity(format!(
                        "agent {} has non-finite covariates",
                        agent.schema.agent_id
                    )));
                }
            }
            if let Some(target) = &agent.target {
                if target.len() != t {
                    return Err(MarketError::Shape {
                        expected: format!("{t} rows"),
                        actual: target.len().to_string(),
                    });
                }
                if target.iter().any(|v| !v.is_finite()) {
                    return Err(MarketError::Integrity(format!(
                        "agent {} has non-finite targets",
                        agent.schema.agent_id
                    )));
                }
                if self.normalized && target.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(MarketError::Range(format!(
                        "agent {} normalized target outside [0, 1]",
                        agent.schema.agent_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn agents(&self) -> &[AgentSeries] {
        &self.agents
    }

    pub fn agent(&self, agent_id: u32) -> Option<&AgentSeries> {
        self.agents.iter().find(|a| a.schema.agent_id == agent_id)
    }

    pub fn agent_index(&self, agent_id: u32) -> Option<usize> {
        self.agents.iter().position(|a| a.schema.agent_id == agent_id)
    }

    pub fn lag_count(&self) -> usize {
        self.lag_count
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Rows discarded while aligning zones at load time.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn with_lag_count(mut self, lag_count: usize) -> Self {
        self.lag_count = lag_count;
        self
    }

    /// Returns a copy restricted to rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<MarketFrame> {
        if range.end > self.len() || range.start > range.end {
            return Err(MarketError::Range(format!(
                "slice {:?} outside frame of {} rows",
                range,
                self.len()
            )));
        }
        let agents = self
            .agents
            .iter()
            .map(|a| AgentSeries {
                schema: a.schema.clone(),
                target: a.target.as_ref().map(|t| t[range.clone()].to_vec()),
                exogenous: a.exogenous.iter().map(|x| x[range.clone()].to_vec()).collect(),
            })
            .collect();
        Ok(MarketFrame {
            timestamps: self.timestamps[range].to_vec(),
            agents,
            lag_count: self.lag_count,
            normalized: self.normalized,
            dropped_rows: self.dropped_rows,
        })
    }

    /// Replaces one exogenous series, re-validating the frame.
    pub fn with_feature(&self, agent_id: u32, feature: usize, values: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        let idx = out
            .agent_index(agent_id)
            .ok_or_else(|| MarketError::Schema(format!("unknown agent {agent_id}")))?;
        let slot = out.agents[idx]
            .exogenous
            .get_mut(feature)
            .ok_or_else(|| MarketError::Schema(format!("agent {agent_id} has no feature {feature}")))?;
        *slot = values;
        out.validate()?;
        Ok(out)
    }

    pub fn split(&self, policy: &SplitPolicy) -> Result<Vec<Fold>> {
        split(&self.timestamps, policy)
    }
}

/// `n` hourly timestamps from `start`.
pub fn hourly_index(start: NaiveDateTime, n: usize) -> Vec<NaiveDateTime> {
    (0..n)
        .map(|i| start + chrono::Duration::hours(i as i64))
        .collect()
}

/// Start of generated series: 2012-01-01 01:00.
pub fn default_start() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2012, 1, 1)
        .and_then(|d| d.and_hms_opt(1, 0, 0))
        .expect("valid start timestamp")
}
