//! Synthetic market datasets with known generating coefficients.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{default_start, hourly_index, AgentSchema, AgentSeries, MarketFrame, WIND_FEATURES};
use crate::error::{MarketError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `y = Σ x β + ε`
    Linear,
    /// `y = exp(0.05 Σ x β) + ε`
    Exponential,
}

/// Generator settings. Feature ids are 1-based; the buyer is agent 0 and every
/// other feature is sold by its own agent whose id equals the feature id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_features: usize,
    pub buyer_feature_ids: Vec<usize>,
    pub active_ids: Vec<usize>,
    /// `(original, copy)`: the copy column duplicates the original exactly.
    #[serde(default)]
    pub redundant_pairs: Vec<(usize, usize)>,
    pub link: Link,
    pub noise_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub buyer_feature_ids: Vec<usize>,
    pub active_ids: Vec<usize>,
    /// `(feature id, coefficient)` for every active feature.
    pub beta: Vec<(usize, f64)>,
    pub redundant_pairs: Vec<(usize, usize)>,
    pub link: Link,
    pub noise_sd: f64,
}

impl SyntheticTruth {
    pub fn coefficient(&self, id: usize) -> f64 {
        self.beta
            .iter()
            .find(|(i, _)| *i == id)
            .map_or(0.0, |(_, b)| *b)
    }

    /// Features whose column carries signal: active ids plus copies of active ids.
    pub fn informative_ids(&self) -> BTreeSet<usize> {
        let mut ids: BTreeSet<usize> = self.active_ids.iter().copied().collect();
        for &(orig, copy) in &self.redundant_pairs {
            if ids.contains(&orig) {
                ids.insert(copy);
            }
        }
        ids
    }
}

impl SyntheticSpec {
    /// 100 covariates, buyer owns 1..=10, ten active features and two redundant
    /// copies: `x73 = x3` and `x74 = x37`.
    pub fn hundred_feature(link: Link, seed: u64) -> Self {
        SyntheticSpec {
            n_features: 100,
            buyer_feature_ids: (1..=10).collect(),
            active_ids: vec![3, 7, 12, 21, 31, 37, 48, 51, 63, 90],
            redundant_pairs: vec![(3, 73), (37, 74)],
            link,
            noise_sd: 1.0,
            seed,
        }
    }

    /// Scalability setup: `n_features` covariates with a `sparsity` fraction
    /// active, drawn from the seed.
    pub fn advanced(n_features: usize, sparsity: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) || n_features < 10 {
            return Err(MarketError::Config(format!(
                "advanced setup needs >= 10 features and sparsity in [0, 1], got {n_features}, {sparsity}"
            )));
        }
        let n_active = ((n_features as f64) * sparsity).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac71);
        let mut active: Vec<usize> = sample(&mut rng, n_features, n_active)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        active.sort_unstable();
        Ok(SyntheticSpec {
            n_features,
            buyer_feature_ids: (1..=10).collect(),
            active_ids: active,
            redundant_pairs: Vec::new(),
            link: Link::Linear,
            noise_sd: 1.0,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |id: usize| (1..=self.n_features).contains(&id);
        if self.active_ids.is_empty() {
            return Err(MarketError::Config("empty active set".into()));
        }
        if let Some(id) = self
            .active_ids
            .iter()
            .chain(&self.buyer_feature_ids)
            .find(|&&id| !in_range(id))
        {
            return Err(MarketError::Config(format!("feature id {id} out of range")));
        }
        for &(a, b) in &self.redundant_pairs {
            if !in_range(a) || !in_range(b) || a == b {
                return Err(MarketError::Config(format!("bad redundant pair ({a}, {b})")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(MarketError::Config("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Draws a frame of `t` hourly rows plus the generating coefficients.
pub fn synthesize(spec: &SyntheticSpec, t: usize) -> Result<(MarketFrame, SyntheticTruth)> {
    spec.validate()?;
    if t < 2 * spec.n_features {
        log::warn!(
            "synthesizing {t} rows for {} features; at least {} recommended",
            spec.n_features,
            2 * spec.n_features
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut columns: Vec<Vec<f64>> = (0..spec.n_features)
        .map(|_| (0..t).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    for &(orig, copy) in &spec.redundant_pairs {
        columns[copy - 1] = columns[orig - 1].clone();
    }
    let mut active: Vec<usize> = spec.active_ids.clone();
    active.sort_unstable();
    active.dedup();
    let coef_dist = Uniform::new_inclusive(0.5, 2.0).expect("valid range");
    let beta: Vec<(usize, f64)> = active
        .iter()
        .map(|&id| (id, coef_dist.sample(&mut rng)))
        .collect();
    let target: Vec<f64> = (0..t)
        .map(|row| {
            let signal: f64 = beta.iter().map(|&(id, b)| columns[id - 1][row] * b).sum();
            let noise = if spec.noise_sd > 0.0 {
                spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            match spec.link {
                Link::Linear => signal + noise,
                Link::Exponential => (0.05 * signal).exp() + noise,
            }
        })
        .collect();

    let buyer_ids: BTreeSet<usize> = spec.buyer_feature_ids.iter().copied().collect();
    let mut agents = vec![AgentSeries {
        schema: AgentSchema::new(0, buyer_ids.iter().map(|id| format!("x{id}")).collect(), 1.0),
        target: Some(target),
        exogenous: buyer_ids.iter().map(|&id| columns[id - 1].clone()).collect(),
    }];
    for id in 1..=spec.n_features {
        if buyer_ids.contains(&id) {
            continue;
        }
        agents.push(AgentSeries {
            schema: AgentSchema::new(id as u32, vec![format!("x{id}")], 1.0),
            target: None,
            exogenous: vec![std::mem::take(&mut columns[id - 1])],
        });
    }
    let frame = MarketFrame::new(hourly_index(default_start(), t), agents, 0, false)?;
    let truth = SyntheticTruth {
        buyer_feature_ids: buyer_ids.into_iter().collect(),
        active_ids: active,
        beta,
        redundant_pairs: spec.redundant_pairs.clone(),
        link: spec.link,
        noise_sd: spec.noise_sd,
    };
    Ok((frame, truth))
}

/// Wind-farm-like zones driven by one shared persistent latent signal. Zone `i`
/// sees the latent `i * lag_step` hours late, so other zones' covariates carry
/// information about a zone's own power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedZonesSpec {
    pub n_zones: usize,
    pub hours: usize,
    /// AR(1) persistence of the latent signal.
    pub persistence: f64,
    pub lag_step: usize,
    pub feature_noise: f64,
    pub target_noise: f64,
    pub seed: u64,
}

impl Default for CorrelatedZonesSpec {
    fn default() -> Self {
        CorrelatedZonesSpec {
            n_zones: 3,
            hours: 24 * 30 * 4,
            persistence: 0.95,
            lag_step: 2,
            feature_noise: 1.0,
            target_noise: 0.03,
            seed: 7,
        }
    }
}

pub fn synthesize_zones(spec: &CorrelatedZonesSpec) -> Result<MarketFrame> {
    if spec.n_zones == 0 || spec.hours == 0 {
        return Err(MarketError::Config("need at least one zone and one hour".into()));
    }
    if !(0.0..1.0).contains(&spec.persistence) {
        return Err(MarketError::Config("persistence must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_offset = (spec.n_zones - 1) * spec.lag_step;
    let innovation = (1.0 - spec.persistence * spec.persistence).sqrt();
    let mut latent = Vec::with_capacity(spec.hours + max_offset);
    let mut s: f64 = rng.sample(StandardNormal);
    for _ in 0..spec.hours + max_offset {
        s = spec.persistence * s + innovation * rng.sample::<f64, _>(StandardNormal);
        latent.push(s);
    }
    let loadings = [1.0, 0.8, 1.2, 0.9];
    let agents = (0..spec.n_zones)
        .map(|zone| {
            let offset = max_offset - zone * spec.lag_step;
            let signal = &latent[offset..offset + spec.hours];
            let exogenous = loadings
                .iter()
                .map(|a| {
                    signal
                        .iter()
                        .map(|u| a * u + spec.feature_noise * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let target = signal
                .iter()
                .map(|u| {
                    let p = 1.0 / (1.0 + (-(2.0 * u - 0.3)).exp());
                    (p + spec.target_noise * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0)
                })
                .collect();
            AgentSeries {
                schema: AgentSchema::new(
                    zone as u32 + 1,
                    WIND_FEATURES.iter().map(|s| s.to_string()).collect(),
                    1.0,
                ),
                target: Some(target),
                exogenous,
            }
        })
        .collect();
    MarketFrame::new(hourly_index(default_start(), spec.hours), agents, 0, true)
}
